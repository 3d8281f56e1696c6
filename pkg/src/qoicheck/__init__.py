"""Calibration checks for derived quantities of interest.

Ranks prior-side values among posterior-side samples across replicated
simulation studies; uniform ranks certify that a posterior (or a derived
quantity pipeline) is calibrated. Ships two worked case studies: a multilevel
log-link model with three versions of an expected-response QOI, and a joint
smooth-regression model with weighted conditional expectations and a
functional ANOVA decomposition.
"""

from .calibration import (
    CS1_MATRIX_LABELS,
    CS2_UNWEIGHTED,
    CS2_WEIGHTED,
    InsufficientReplicationsError,
    RankRecord,
    UniformityReport,
    chi_square_uniformity,
    display_position,
    ecdf_uniformity_band,
    group_by_comparison,
    ppp_value,
    rank_statistic,
    run_cs1_matrix,
    run_cs2_study,
    run_qoi_check_prior_derived,
    run_qoi_check_prior_predicted,
    run_sbc,
)
from .gridstruct import (
    GridSpec,
    KIND_REFGRID,
    KIND_REPLICATE,
    KIND_XZ_GRID,
    build_reference_grid,
    build_replicate_structure,
    build_xz_grid,
    extend_parameters_gaussian,
    extend_parameters_uncertainty,
    grid_axis,
)
from .harness import (
    ConfigError,
    StudyConfig,
    emit_ecdf_plot,
    load_config,
    run_self_sbc,
    run_study,
)
from .inference import (
    McmcConfig,
    PosteriorMatrix,
    SamplerQualityError,
    diagnostics,
    naive_rejection_posterior,
    sample_posterior_conjugate,
    sample_posterior_cs1,
    sample_posterior_cs2,
)
from .models import (
    CS1,
    CS2,
    Dataset,
    MissingCoefficientError,
    ModelSpec,
    ParameterDraw,
    TOY_BERNOULLI,
    TOY_NORMAL,
    cs2_penalized_count,
    draw_prior,
    make_spec,
    parameter_schema,
    simulate_covariates_cs1,
    simulate_covariates_cs2,
    simulate_response,
)
from .qoi import (
    AnovaComponents,
    QoiLabel,
    anova_decompose,
    beta_density_weights,
    qoi_cs2_conditional_expectation,
    qoi_version_a,
    qoi_version_b,
    qoi_version_c,
)
from .rngdist import (
    ParameterError,
    SeedStream,
    TruncationInfeasibleError,
    sample_beta_mean_precision,
    sample_normal,
    sample_truncated_normal_positive,
    sample_uniform,
)
from .smooth import ConditioningError, SmoothReparam, build_smooth, design_matrix, evaluate_smooth

__version__ = "0.1.0"
