"""QOI versions, labels, prediction means, weights, and the ANOVA split."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from qoicheck.gridstruct import (
    GridSpec,
    KIND_REFGRID,
    build_reference_grid,
    grid_axis,
)
from qoicheck.models import CS1, ParameterDraw, make_spec
from qoicheck.qoi import (
    QoiLabel,
    SAMPLING_GAUSSIAN,
    SAMPLING_UNCERTAINTY,
    TAG_REFGRID,
    TAG_REPLICATE,
    UNIFORM,
    WEIGHTED,
    anova_decompose,
    beta_density_weights,
    beta_margin_weights,
    qoi_cs2_conditional_expectation,
    qoi_version_a,
    qoi_version_b,
    qoi_version_c,
)
from qoicheck.rngdist import ParameterError, SeedStream

# frozen closed-form anchors: exp(1.125) for the marginal expectation at
# beta0=0, beta1=1, x=1, sigma_gamma=0.5; exp(1) for the conditional one
_EXP_1 = 2.718281828459045
_EXP_1_125 = 3.080216848918031


def _cs1_draw(beta0=0.0, beta1=1.0, sigma_gamma=0.5):
    return ParameterDraw(
        {"beta0": beta0, "beta1": beta1, "sigma_gamma": sigma_gamma, "sigma": 1.0,
         **{f"gamma_{i}": 0.0 for i in range(1, 21)}}
    )


class TestLabels:
    def test_render_parse_round_trip(self):
        for text in ("(a)", "(b)", "(c,A,G)", "(c,A,u)", "(c,B,G)", "(c,B,u)"):
            assert QoiLabel.parse(text).render() == text

    def test_letter_binding(self):
        lab = QoiLabel.parse("(c,A,G)")
        assert lab.structure == TAG_REFGRID
        assert lab.sampling == SAMPLING_GAUSSIAN
        lab = QoiLabel.parse("(c,B,u)")
        assert lab.structure == TAG_REPLICATE
        assert lab.sampling == SAMPLING_UNCERTAINTY

    def test_invalid_labels_raise(self):
        for text in ("(d)", "(c,A)", "(c,X,G)", "", "(c,A,G,extra)"):
            with pytest.raises(ParameterError):
                QoiLabel.parse(text)

    def test_version_c_requires_parts(self):
        with pytest.raises(ParameterError):
            QoiLabel("c")
        with pytest.raises(ParameterError):
            QoiLabel("a", structure=TAG_REFGRID, sampling=SAMPLING_GAUSSIAN)


class TestClosedFormVersions:
    def test_version_a_anchor(self):
        assert qoi_version_a(_cs1_draw(), 1.0) == pytest.approx(_EXP_1, rel=1e-12)

    def test_version_b_anchor(self):
        assert qoi_version_b(_cs1_draw(), 1.0) == pytest.approx(_EXP_1_125, rel=1e-12)

    def test_version_b_is_lognormal_mean(self):
        # MC oracle: E[exp(eta + gamma)] with gamma ~ N(0, sg^2)
        rng = np.random.default_rng(1)
        sg = 0.5
        mc = np.exp(1.0 + rng.normal(0, sg, size=2_000_000)).mean()
        assert qoi_version_b(_cs1_draw(sigma_gamma=sg), 1.0) == pytest.approx(mc, rel=2e-3)

    @given(
        beta0=st.floats(-0.5, 0.5),
        beta1=st.floats(0.5, 1.5),
        sigma_gamma=st.floats(0.01, 1.5),
        x=st.floats(0.0, 2.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_jensen_gap_property(self, beta0, beta1, sigma_gamma, x):
        draw = _cs1_draw(beta0, beta1, sigma_gamma)
        assert qoi_version_b(draw, x) > qoi_version_a(draw, x)


class TestVersionC:
    def test_refgrid_gaussian_consistent_with_marginal(self):
        # mean over many fresh levels converges on version (b)
        spec = make_spec(CS1, N=500, G=20)
        draw = _cs1_draw()
        grid = build_reference_grid(GridSpec(KIND_REFGRID, x_fixed=1.0, n_new_levels=20_000), 20)
        root = SeedStream(64, 0)
        val = qoi_version_c(spec, draw, grid, SAMPLING_GAUSSIAN, root)
        se = math.sqrt((_EXP_1_125**2 * (math.exp(0.25) - 1) + 1.0) / 20_000)
        assert abs(val - _EXP_1_125) < 5 * se

    def test_uncertainty_sampling_reuses_existing_coefficients(self):
        spec = make_spec(CS1, N=500, G=20)
        values = {"beta0": 0.0, "beta1": 1.0, "sigma_gamma": 0.5, "sigma": 1e-9}
        values.update({f"gamma_{i}": 0.7 for i in range(1, 21)})
        draw = ParameterDraw(values)
        grid = build_reference_grid(GridSpec(KIND_REFGRID, x_fixed=1.0, n_new_levels=500), 20)
        val = qoi_version_c(spec, draw, grid, SAMPLING_UNCERTAINTY, SeedStream(64, 1))
        # every copied gamma equals 0.7 and noise is negligible
        assert val == pytest.approx(math.exp(1.7), rel=1e-6)

    def test_needs_prediction_structure(self):
        from qoicheck.models import Dataset, TAG_ORIGINAL

        spec = make_spec(CS1, N=10, G=2)
        data = Dataset(np.ones(5), TAG_ORIGINAL)
        with pytest.raises(ParameterError):
            qoi_version_c(spec, _cs1_draw(), data, SAMPLING_GAUSSIAN, SeedStream(64, 2))

    def test_repeated_calls_differ_by_mc_noise(self):
        spec = make_spec(CS1, N=500, G=20)
        grid = build_reference_grid(GridSpec(KIND_REFGRID, x_fixed=1.0, n_new_levels=50), 20)
        stream = SeedStream(64, 3)
        assert qoi_version_c(spec, _cs1_draw(), grid, SAMPLING_GAUSSIAN, stream.child(0)) != \
            qoi_version_c(spec, _cs1_draw(), grid, SAMPLING_GAUSSIAN, stream.child(1))


class TestWeights:
    def test_matches_scipy_beta_density_shape(self):
        grid = grid_axis(50)
        w = beta_margin_weights(-1.1, 3.0, grid)
        mu = 1.0 / (1.0 + math.exp(1.1))
        ref = stats.beta(mu * 3.0, (1 - mu) * 3.0).pdf(grid)
        ref /= ref.sum()
        assert np.allclose(w, ref, rtol=1e-10)

    def test_rejects_boundary_grid(self):
        with pytest.raises(ParameterError):
            beta_margin_weights(0.0, 2.0, np.array([0.0, 0.5]))

    def test_density_weights_read_z_margin(self):
        draw = ParameterDraw({"beta0_z": -1.1, "phi_z": 3.0})
        assert np.allclose(
            beta_density_weights(draw, grid_axis(10)),
            beta_margin_weights(-1.1, 3.0, grid_axis(10)),
        )

    def test_weights_sum_to_one(self):
        assert beta_margin_weights(0.3, 7.0, grid_axis(33)).sum() == pytest.approx(1.0)


class TestAnova:
    def _surface(self, rng, m=12):
        return rng.normal(size=(m, m))

    def test_additive_identity_exact(self, rng):
        F = self._surface(rng)
        wx = rng.random(12)
        wz = rng.random(12)
        comps = anova_decompose(F, wx, wz)
        recomposed = comps.f_empty + comps.f_x[:, None] + comps.f_z[None, :] + comps.f_xz
        assert np.abs(recomposed - F).max() < 1e-12

    def test_weighted_main_effect_means_vanish(self, rng):
        F = self._surface(rng)
        comps = anova_decompose(F, rng.random(12), rng.random(12))
        assert abs(comps.x_weights @ comps.f_x) < 1e-12
        assert abs(comps.z_weights @ comps.f_z) < 1e-12

    def test_intercept_is_weighted_grand_mean(self, rng):
        F = self._surface(rng)
        wx, wz = rng.random(12), rng.random(12)
        comps = anova_decompose(F, wx, wz)
        wxn, wzn = wx / wx.sum(), wz / wz.sum()
        assert comps.f_empty == pytest.approx(float(wxn @ F @ wzn))

    def test_additive_surface_has_no_interaction(self, rng):
        ax = rng.normal(size=15)
        bz = rng.normal(size=15)
        F = ax[:, None] + bz[None, :]
        comps = anova_decompose(F, rng.random(15), rng.random(15))
        assert np.abs(comps.f_xz).max() < 1e-12

    def test_uniform_scheme_ignores_supplied_weights(self, rng):
        F = self._surface(rng)
        comps = anova_decompose(F, None, None, scheme=UNIFORM)
        assert np.allclose(comps.x_weights, 1.0 / 12)
        assert comps.f_empty == pytest.approx(float(F.mean()))

    def test_rejects_negative_weights(self, rng):
        with pytest.raises(ParameterError):
            anova_decompose(self._surface(rng), -np.ones(12), np.ones(12))

    def test_rejects_non_table(self, rng):
        with pytest.raises(ParameterError):
            anova_decompose(np.zeros(5), None, None, scheme=UNIFORM)

    @given(
        F=arrays(np.float64, (6, 6), elements=st.floats(-100, 100)),
        wx=arrays(np.float64, 6, elements=st.floats(0.01, 10)),
        wz=arrays(np.float64, 6, elements=st.floats(0.01, 10)),
    )
    @settings(max_examples=150, deadline=None)
    def test_additivity_property(self, F, wx, wz):
        comps = anova_decompose(F, wx, wz)
        recomposed = comps.f_empty + comps.f_x[:, None] + comps.f_z[None, :] + comps.f_xz
        scale = max(1.0, np.abs(F).max())
        assert np.abs(recomposed - F).max() < 1e-10 * scale


class TestConditionalExpectation:
    def test_flat_surface_weighting_invariant(self, cs2_setup):
        theta, data, basis, _ = cs2_setup
        values = dict.fromkeys(theta.values, 0.0)
        values.update({"beta0_y": 1.3, "beta_s1": 0.0, "beta_s2": 0.0,
                       "sigma_y": 0.1, "sigma_s": 1.0, "phi_x": 3.0, "phi_z": 3.0})
        for l in range(1, basis.L + 1):
            values[f"b_{l}"] = 0.0
        flat = ParameterDraw(values)
        grid = grid_axis(50)
        w = qoi_cs2_conditional_expectation(flat, basis, 0.5, grid, scheme=WEIGHTED)
        u = qoi_cs2_conditional_expectation(flat, basis, 0.5, grid, scheme=UNIFORM)
        assert w == pytest.approx(1.3)
        assert u == pytest.approx(1.3)

    def test_schemes_differ_on_sloped_surface(self, cs2_setup):
        theta, data, basis, _ = cs2_setup
        grid = grid_axis(50)
        w = qoi_cs2_conditional_expectation(theta, basis, 0.5, grid, scheme=WEIGHTED)
        u = qoi_cs2_conditional_expectation(theta, basis, 0.5, grid, scheme=UNIFORM)
        # skewed z margin vs flat weights must move the average
        assert w != pytest.approx(u, abs=1e-6)

    def test_unknown_scheme(self, cs2_setup):
        theta, _, basis, _ = cs2_setup
        with pytest.raises(ParameterError):
            qoi_cs2_conditional_expectation(theta, basis, 0.5, grid_axis(10), scheme="nope")
