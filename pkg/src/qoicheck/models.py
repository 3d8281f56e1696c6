"""Generative model families: priors, covariates, linear predictors, responses.

Four families are supported: the multilevel log-link model (case study one),
the joint Beta/Beta/Gaussian smooth model (case study two), and two toy
families used as exact oracles for the rank machinery.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rngdist import (
    ParameterError,
    SeedStream,
    sample_beta_mean_precision,
    sample_group_assignment,
    sample_normal,
    sample_truncated_normal_positive,
    sample_uniform,
)

CS1 = "cs1_multilevel_loglink"
CS2 = "cs2_smooth_joint"
TOY_NORMAL = "toy_normal_conjugate"
TOY_BERNOULLI = "toy_bernoulli"

TAG_ORIGINAL = "original"
TAG_REPLICATE = "replicate"
TAG_REFGRID = "refgrid"
TAG_XZ_GRID = "xz_grid"

# prior descriptors are (kind, p1, p2): normal(mean, sd),
# normal_positive(loc, sd), uniform(a, b), beta(shape_a, shape_b)
PriorConfig = dict[str, tuple[str, float, float]]

_CS1_PRIORS: PriorConfig = {
    "beta0": ("normal", 0.0, 0.1),
    "beta1": ("normal", 1.0, 0.1),
    "sigma_gamma": ("normal_positive", 0.5, 0.1),
    "sigma": ("normal_positive", 1.0, 0.1),
}

_CS2_PRIORS: PriorConfig = {
    "beta0_x": ("normal", 0.0, 0.001),
    "phi_x": ("normal_positive", 3.0, 0.001),
    "beta0_z": ("normal", -1.1, 0.001),
    "phi_z": ("normal_positive", 3.0, 0.001),
    "beta0_y": ("normal", 0.5, 0.1),
    "beta_s1": ("normal", 1.0, 0.1),
    "beta_s2": ("normal", -1.0, 0.1),
    "sigma_s": ("normal_positive", 1.0, 0.1),
    "sigma_y": ("normal_positive", 0.1, 0.01),
}

_TOY_NORMAL_PRIORS: PriorConfig = {"theta": ("normal", 0.0, 1.0)}
_TOY_BERNOULLI_PRIORS: PriorConfig = {"theta": ("beta", 1.0, 1.0)}

_SCALE_PARAMS = ("sigma", "sigma_gamma", "sigma_y", "sigma_s", "phi_x", "phi_z")


class MissingCoefficientError(KeyError):
    """A data row references a group level with no coefficient in the draw.

    Signals a prediction grid that was built without extending the parameter
    draw for its new levels first.
    """


def cs2_penalized_count(k: int) -> int:
    """Number of penalized basis coefficients for basis size k.

    The radial layout uses kappa = k - 3 knots whose projected penalty has a
    3-dimensional null space, leaving kappa - 3 penalized directions.
    """
    return max(k - 6, 0)


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus its prior configuration and dimensions."""

    family: str
    N: int
    G: int = 0
    k: int = 0
    prior_config: tuple[tuple[str, tuple[str, float, float]], ...] = ()

    def __post_init__(self) -> None:
        if self.family not in (CS1, CS2, TOY_NORMAL, TOY_BERNOULLI):
            raise ParameterError(f"unknown model family {self.family!r}")
        if self.family == CS1 and not (self.N >= self.G >= 1):
            raise ParameterError(f"CS1 requires N >= G >= 1, got N={self.N}, G={self.G}")
        if self.family == CS2 and self.k < 4:
            raise ParameterError(f"CS2 requires k >= 4, got k={self.k}")
        expected = set(_default_priors(self.family))
        got = {name for name, _ in self.prior_config}
        if got != expected:
            raise ParameterError(
                f"prior_config must cover exactly {sorted(expected)}, got {sorted(got)}"
            )

    @property
    def priors(self) -> PriorConfig:
        return dict(self.prior_config)


def _default_priors(family: str) -> PriorConfig:
    table = {
        CS1: _CS1_PRIORS,
        CS2: _CS2_PRIORS,
        TOY_NORMAL: _TOY_NORMAL_PRIORS,
        TOY_BERNOULLI: _TOY_BERNOULLI_PRIORS,
    }
    try:
        return table[family]
    except KeyError:
        raise ParameterError(f"unknown model family {family!r}") from None


def make_spec(
    family: str,
    N: int,
    G: int = 0,
    k: int = 0,
    prior_overrides: PriorConfig | None = None,
) -> ModelSpec:
    """Build a ModelSpec with the study's default priors, optionally overridden."""
    priors = dict(_default_priors(family))
    for name, desc in dict(prior_overrides or {}).items():
        if name not in priors:
            raise ParameterError(f"unknown prior parameter {name!r} for family {family}")
        priors[name] = (str(desc[0]), float(desc[1]), float(desc[2]))
    return ModelSpec(family, N, G, k, tuple(sorted(priors.items())))


@dataclass
class ParameterDraw:
    """One named parameter vector, optionally extended with grid coefficients."""

    values: dict[str, float]
    extension: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = self.values.keys() & self.extension.keys()
        if overlap:
            raise ParameterError(f"extension keys shadow core keys: {sorted(overlap)}")
        for name in _SCALE_PARAMS:
            if name in self.values and self.values[name] <= 0:
                raise ParameterError(f"scale parameter {name} must be positive")

    def coefficient(self, key: str) -> float:
        if key in self.extension:
            return self.extension[key]
        if key in self.values:
            return self.values[key]
        raise MissingCoefficientError(
            f"no coefficient {key!r}; extend the draw for new grid levels first"
        )


@dataclass
class Dataset:
    """Columnar covariate/group/response data with a structure tag."""

    x: np.ndarray
    tag: str
    group: np.ndarray | None = None
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    level_registry: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=np.int64)
            known = set(self.level_registry)
            present = set(np.unique(self.group).tolist())
            if not present <= known:
                raise ParameterError(
                    f"rows reference unregistered levels: {sorted(present - known)}"
                )

    @property
    def N(self) -> int:
        return int(self.x.shape[0])

    def with_response(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x, self.tag, self.group, self.z, np.asarray(y, float), self.level_registry)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_id", "x", "z", "group", "y"])
            for i in range(self.N):
                writer.writerow([
                    i,
                    repr(float(self.x[i])),
                    "" if self.z is None else repr(float(self.z[i])),
                    "" if self.group is None else int(self.group[i]),
                    "" if self.y is None else repr(float(self.y[i])),
                ])


def parameter_schema(spec: ModelSpec) -> list[str]:
    """Ordered scalar-parameter ids for the family (matrix column order)."""
    if spec.family == CS1:
        return (
            ["beta0", "beta1"]
            + [f"gamma_{i}" for i in range(1, spec.G + 1)]
            + ["sigma_gamma", "sigma"]
        )
    if spec.family == CS2:
        L = cs2_penalized_count(spec.k)
        return (
            ["beta0_x", "phi_x", "beta0_z", "phi_z", "beta0_y", "beta_s1", "beta_s2"]
            + [f"b_{l}" for l in range(1, L + 1)]
            + ["sigma_s", "sigma_y"]
        )
    return ["theta"]


def _draw_scalar(desc: tuple[str, float, float], stream: SeedStream) -> float:
    kind, p1, p2 = desc
    if kind == "normal":
        return sample_normal(p1, p2, stream)
    if kind == "normal_positive":
        return sample_truncated_normal_positive(p1, p2, stream)
    if kind == "uniform":
        return sample_uniform(p1, p2, stream)
    if kind == "beta":
        return float(stream.rng.beta(p1, p2))
    raise ParameterError(f"unknown prior kind {kind!r}")


def draw_prior(spec: ModelSpec, stream: SeedStream) -> ParameterDraw:
    """Draw one parameter vector from the prior.

    Group coefficients (CS1) and penalized basis coefficients (CS2) are drawn
    from their hierarchical Normal using the scale drawn in the same call.
    """
    priors = spec.priors
    values: dict[str, float] = {}
    if spec.family == CS1:
        for name in ("beta0", "beta1", "sigma_gamma", "sigma"):
            values[name] = _draw_scalar(priors[name], stream)
        for i in range(1, spec.G + 1):
            values[f"gamma_{i}"] = sample_normal(0.0, values["sigma_gamma"], stream)
    elif spec.family == CS2:
        for name in (
            "beta0_x", "phi_x", "beta0_z", "phi_z",
            "beta0_y", "beta_s1", "beta_s2", "sigma_s", "sigma_y",
        ):
            values[name] = _draw_scalar(priors[name], stream)
        for l in range(1, cs2_penalized_count(spec.k) + 1):
            values[f"b_{l}"] = sample_normal(0.0, values["sigma_s"], stream)
    else:
        values["theta"] = _draw_scalar(priors["theta"], stream)
    return ParameterDraw(values)


def simulate_covariates_cs1(spec: ModelSpec, stream: SeedStream) -> Dataset:
    """N rows with x ~ Uniform[0,2] and groups assigned with replacement."""
    if spec.family != CS1:
        raise ParameterError("simulate_covariates_cs1 requires the CS1 family")
    x = sample_uniform(0.0, 2.0, stream, size=spec.N)
    group = sample_group_assignment(spec.N, spec.G, stream)
    return Dataset(x, TAG_ORIGINAL, group=group, level_registry=tuple(range(1, spec.G + 1)))


def simulate_covariates_cs2(spec: ModelSpec, params: ParameterDraw, stream: SeedStream) -> Dataset:
    """N rows with x, z from the draw's two Beta margins."""
    if spec.family != CS2:
        raise ParameterError("simulate_covariates_cs2 requires the CS2 family")
    v = params.values
    mu_x = 1.0 / (1.0 + math.exp(-v["beta0_x"]))
    mu_z = 1.0 / (1.0 + math.exp(-v["beta0_z"]))
    x = sample_beta_mean_precision(mu_x, v["phi_x"], stream, size=spec.N)
    z = sample_beta_mean_precision(mu_z, v["phi_z"], stream, size=spec.N)
    return Dataset(x, TAG_ORIGINAL, z=z)


def group_coefficients(params: ParameterDraw, levels: np.ndarray) -> np.ndarray:
    """Vector of gamma coefficients for the given level ids."""
    lut = {}
    for lev in np.unique(levels):
        lut[int(lev)] = params.coefficient(f"gamma_{int(lev)}")
    return np.array([lut[int(lev)] for lev in levels])


def linear_predictor(
    spec: ModelSpec,
    params: ParameterDraw,
    data: Dataset,
    basis=None,
) -> np.ndarray:
    """Per-row linear predictor eta for the family."""
    v = params.values
    if spec.family == CS1:
        if data.group is None:
            raise ParameterError("CS1 data must carry a group column")
        return v["beta0"] + v["beta1"] * data.x + group_coefficients(params, data.group)
    if spec.family == CS2:
        if basis is None:
            raise ParameterError("CS2 linear predictor needs the smooth basis")
        from .smooth import evaluate_smooth

        return v["beta0_y"] + evaluate_smooth(basis, params, data)
    return np.full(data.N, v["theta"])


def simulate_response(
    spec: ModelSpec,
    params: ParameterDraw,
    data: Dataset,
    stream: SeedStream,
    basis=None,
) -> Dataset:
    """Fill y by one draw from the family's response distribution per row."""
    eta = linear_predictor(spec, params, data, basis=basis)
    v = params.values
    if spec.family == CS1:
        y = stream.rng.normal(np.exp(eta), v["sigma"])
    elif spec.family == CS2:
        y = stream.rng.normal(eta, v["sigma_y"])
    elif spec.family == TOY_NORMAL:
        y = stream.rng.normal(eta, 1.0)
    else:
        y = (stream.rng.uniform(size=data.N) < eta).astype(float)
    return data.with_response(y)
