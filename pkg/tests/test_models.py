"""Model specs, priors, covariate and response simulation."""

import math

import numpy as np
import pytest

from qoicheck.models import (
    CS1,
    CS2,
    TAG_ORIGINAL,
    TOY_NORMAL,
    Dataset,
    MissingCoefficientError,
    ParameterDraw,
    cs2_penalized_count,
    draw_prior,
    group_coefficients,
    linear_predictor,
    make_spec,
    parameter_schema,
    simulate_covariates_cs1,
    simulate_covariates_cs2,
    simulate_response,
)
from qoicheck.rngdist import ParameterError, SeedStream


class TestSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            make_spec("not_a_family", N=10)

    def test_cs1_needs_enough_rows(self):
        with pytest.raises(ParameterError):
            make_spec(CS1, N=5, G=10)

    def test_cs2_needs_minimum_basis(self):
        with pytest.raises(ParameterError):
            make_spec(CS2, N=100, k=3)

    def test_prior_override_unknown_name(self):
        with pytest.raises(ParameterError):
            make_spec(CS1, N=10, G=2, prior_overrides={"nonesuch": ("normal", 0, 1)})

    def test_prior_override_applies(self):
        spec = make_spec(CS1, N=10, G=2, prior_overrides={"beta1": ("normal", 5.0, 0.2)})
        assert spec.priors["beta1"] == ("normal", 5.0, 0.2)
        assert spec.priors["beta0"] == ("normal", 0.0, 0.1)

    def test_prior_override_accepts_pair_sequence(self):
        spec = make_spec(CS1, N=10, G=2,
                         prior_overrides=(("beta0", ("normal", 1.0, 0.5)),))
        assert spec.priors["beta0"] == ("normal", 1.0, 0.5)


class TestSchema:
    def test_cs1_order(self):
        spec = make_spec(CS1, N=50, G=3)
        assert parameter_schema(spec) == [
            "beta0", "beta1", "gamma_1", "gamma_2", "gamma_3", "sigma_gamma", "sigma",
        ]

    def test_cs2_order_and_penalized_count(self):
        spec = make_spec(CS2, N=50, k=10)
        schema = parameter_schema(spec)
        assert schema[:7] == ["beta0_x", "phi_x", "beta0_z", "phi_z",
                              "beta0_y", "beta_s1", "beta_s2"]
        assert schema[7:11] == ["b_1", "b_2", "b_3", "b_4"]
        assert schema[-2:] == ["sigma_s", "sigma_y"]
        assert cs2_penalized_count(10) == 4
        assert cs2_penalized_count(6) == 0


class TestPriorDraws:
    def test_cs1_marginal_moments(self):
        spec = make_spec(CS1, N=10, G=4)
        root = SeedStream(42, 0)
        draws = [draw_prior(spec, root.child(i)) for i in range(4000)]
        beta0 = np.array([d.values["beta0"] for d in draws])
        sg = np.array([d.values["sigma_gamma"] for d in draws])
        assert abs(beta0.mean()) < 4 * 0.1 / math.sqrt(beta0.size)
        assert abs(beta0.std() - 0.1) < 0.005
        assert (sg > 0).all()
        assert abs(sg.mean() - 0.5) < 0.01  # truncation negligible at 5 sd

    def test_cs1_group_effects_use_drawn_scale(self):
        spec = make_spec(CS1, N=400, G=400)
        draw = draw_prior(spec, SeedStream(43, 0))
        gammas = np.array([draw.values[f"gamma_{i}"] for i in range(1, 401)])
        sg = draw.values["sigma_gamma"]
        assert abs(gammas.std() - sg) < 0.2 * sg

    def test_determinism(self):
        spec = make_spec(CS2, N=10, k=10)
        a = draw_prior(spec, SeedStream(44, 7)).values
        b = draw_prior(spec, SeedStream(44, 7)).values
        assert a == b

    def test_draw_covers_schema(self):
        for spec in (make_spec(CS1, N=10, G=3), make_spec(CS2, N=10, k=10),
                     make_spec(TOY_NORMAL, N=5)):
            draw = draw_prior(spec, SeedStream(45, 0))
            assert set(parameter_schema(spec)) <= set(draw.values)


class TestParameterDraw:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ParameterError):
            ParameterDraw({"sigma": 0.0})

    def test_extension_cannot_shadow(self):
        with pytest.raises(ParameterError):
            ParameterDraw({"gamma_1": 0.5}, extension={"gamma_1": 0.2})

    def test_coefficient_lookup_order(self):
        draw = ParameterDraw({"gamma_1": 0.5}, extension={"gamma_2": -0.25})
        assert draw.coefficient("gamma_1") == 0.5
        assert draw.coefficient("gamma_2") == -0.25
        with pytest.raises(MissingCoefficientError):
            draw.coefficient("gamma_3")


class TestCovariates:
    def test_cs1_ranges_and_registry(self):
        spec = make_spec(CS1, N=500, G=20)
        data = simulate_covariates_cs1(spec, SeedStream(46, 0))
        assert data.N == 500
        assert data.x.min() >= 0.0 and data.x.max() <= 2.0
        assert data.tag == TAG_ORIGINAL
        assert data.level_registry == tuple(range(1, 21))
        assert set(np.unique(data.group)) <= set(range(1, 21))

    def test_cs2_margins_match_draw(self):
        spec = make_spec(CS2, N=50_000, k=10)
        theta = draw_prior(spec, SeedStream(47, 0))
        data = simulate_covariates_cs2(spec, theta, SeedStream(47, 1))
        mu_z = 1.0 / (1.0 + math.exp(-theta.values["beta0_z"]))
        assert abs(data.z.mean() - mu_z) < 0.01
        assert data.x.min() > 0.0 and data.x.max() < 1.0
        # skewed z margin: mean well below one half
        assert data.z.mean() < 0.35

    def test_family_guards(self):
        with pytest.raises(ParameterError):
            simulate_covariates_cs1(make_spec(CS2, N=10, k=10), SeedStream(48, 0))


class TestDataset:
    def test_unregistered_level_rejected(self):
        with pytest.raises(ParameterError):
            Dataset(np.zeros(3), TAG_ORIGINAL, group=np.array([1, 2, 9]),
                    level_registry=(1, 2))

    def test_with_response_keeps_columns(self):
        data = Dataset(np.array([0.5, 1.0]), TAG_ORIGINAL, group=np.array([1, 1]),
                       level_registry=(1,))
        filled = data.with_response(np.array([2.0, 3.0]))
        assert np.array_equal(filled.y, [2.0, 3.0])
        assert np.array_equal(filled.group, data.group)
        assert data.y is None

    def test_csv_round_trip_columns(self, tmp_path):
        data = Dataset(np.array([0.5]), TAG_ORIGINAL, z=np.array([0.25]))
        path = tmp_path / "data.csv"
        data.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "row_id,x,z,group,y"


class TestResponse:
    def test_cs1_lognormal_mean_oracle(self):
        # fixed parameters, huge N: mean(y) -> exp(beta0 + beta1 x + gamma)
        spec = make_spec(CS1, N=200_000, G=1)
        theta = ParameterDraw({"beta0": 0.2, "beta1": 0.7, "gamma_1": -0.1,
                               "sigma_gamma": 0.5, "sigma": 1.0})
        data = Dataset(np.full(spec.N, 1.0), TAG_ORIGINAL,
                       group=np.ones(spec.N, dtype=int), level_registry=(1,))
        sim = simulate_response(spec, theta, data, SeedStream(49, 0))
        expected = math.exp(0.2 + 0.7 - 0.1)
        assert abs(sim.y.mean() - expected) < 4 * 1.0 / math.sqrt(spec.N)

    def test_cs1_requires_groups(self):
        spec = make_spec(CS1, N=4, G=1)
        data = Dataset(np.zeros(4), TAG_ORIGINAL)
        theta = ParameterDraw({"beta0": 0.0, "beta1": 1.0, "gamma_1": 0.0,
                               "sigma_gamma": 0.5, "sigma": 1.0})
        with pytest.raises(ParameterError):
            simulate_response(spec, theta, data, SeedStream(50, 0))

    def test_group_coefficients_vectorizes_lookup(self):
        draw = ParameterDraw({"gamma_1": 0.5, "gamma_2": -0.5})
        got = group_coefficients(draw, np.array([2, 1, 1, 2]))
        assert np.array_equal(got, [-0.5, 0.5, 0.5, -0.5])

    def test_toy_normal_predictor_is_constant(self):
        spec = make_spec(TOY_NORMAL, N=3)
        theta = ParameterDraw({"theta": 1.5})
        data = Dataset(np.zeros(3), TAG_ORIGINAL)
        eta = linear_predictor(spec, theta, data)
        assert np.array_equal(eta, [1.5, 1.5, 1.5])
