"""Radial smooth basis, penalty structure, and the random-effects transform."""

import numpy as np
import pytest

from qoicheck.models import CS2, Dataset, ParameterDraw, TAG_ORIGINAL, cs2_penalized_count
from qoicheck.rngdist import ParameterError, SeedStream
from qoicheck.smooth import (
    ConditioningError,
    build_smooth,
    design_matrix,
    evaluate_smooth,
    radial_kernel,
)


def _toy_data(n=300, seed=12):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(0.05, 0.95, n), TAG_ORIGINAL, z=rng.uniform(0.05, 0.95, n))


class TestKernel:
    def test_zero_at_origin(self):
        assert radial_kernel(np.array([0.0]))[0] == 0.0

    def test_matches_formula(self):
        r = np.array([0.5, 1.0, 2.0])
        expected = r**2 * np.log(r)
        assert np.allclose(radial_kernel(r), expected)


class TestBuildSmooth:
    def test_knot_count_and_domain(self):
        basis = build_smooth(_toy_data(), k=10)
        assert basis.knots.shape == (7, 2)
        assert (basis.knots >= 0).all() and (basis.knots <= 1).all()

    def test_penalty_is_psd_with_three_null_directions(self):
        basis = build_smooth(_toy_data(), k=12)
        eigvals = np.linalg.eigvalsh(basis.penalty_S)
        top = eigvals.max()
        assert eigvals.min() > -1e-8 * top
        assert (np.abs(eigvals) < 1e-9 * top).sum() == 3
        assert basis.L == cs2_penalized_count(12)

    def test_penalized_count_matches_D(self):
        basis = build_smooth(_toy_data(), k=10)
        assert (basis.D > 0).sum() == basis.L == 4

    def test_deterministic_in_data(self):
        a = build_smooth(_toy_data(seed=3), k=10)
        b = build_smooth(_toy_data(seed=3), k=10)
        assert np.array_equal(a.knots, b.knots)
        assert np.array_equal(a.U, b.U)

    def test_needs_z_column(self):
        with pytest.raises(ParameterError):
            build_smooth(Dataset(np.linspace(0, 1, 10), TAG_ORIGINAL), k=10)

    def test_degenerate_data_raises(self):
        flat = Dataset(np.full(50, 0.5), TAG_ORIGINAL, z=np.full(50, 0.5))
        with pytest.raises(ConditioningError):
            build_smooth(flat, k=10)

    def test_json_snapshot_fields(self):
        blob = build_smooth(_toy_data(), k=10).to_json()
        assert set(blob) == {"knots", "U", "D", "L", "null_dim", "centering_means"}


class TestReparameterization:
    def test_identity_penalty_for_transformed_coefficients(self):
        """Penalty of back-transformed coefficients equals the plain sum of
        squares of the working coefficients: delta' S delta == sum(b^2)."""
        basis = build_smooth(_toy_data(), k=12)
        rng = np.random.default_rng(5)
        b = rng.normal(size=basis.L)
        penalized = basis.D > 0
        delta = basis.U[:, penalized] @ (b / basis.D[penalized])
        quad = float(delta @ basis.penalty_S @ delta)
        assert quad == pytest.approx(float(b @ b), rel=1e-8)

    def test_design_centering(self):
        data = _toy_data()
        basis = build_smooth(data, k=10)
        x1, x2 = design_matrix(basis, data)
        assert np.allclose(x1.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(x2.mean(axis=0), 0.0, atol=1e-10)

    def test_design_shapes_on_new_data(self):
        basis = build_smooth(_toy_data(), k=10)
        new = _toy_data(n=17, seed=99)
        x1, x2 = design_matrix(basis, new)
        assert x1.shape == (17, 2)
        assert x2.shape == (17, basis.L)

    def test_out_of_support_warns(self):
        basis = build_smooth(_toy_data(), k=10)
        bad = Dataset(np.array([1.5]), TAG_ORIGINAL, z=np.array([0.5]))
        with pytest.warns(UserWarning):
            design_matrix(basis, bad)


class TestEvaluate:
    def _draw(self, basis, rng):
        values = {"beta_s1": 0.8, "beta_s2": -0.3}
        for l in range(1, basis.L + 1):
            values[f"b_{l}"] = float(rng.normal())
        return ParameterDraw(values)

    def test_linear_in_coefficients(self):
        data = _toy_data(n=40)
        basis = build_smooth(data, k=10)
        rng = np.random.default_rng(7)
        d1, d2 = self._draw(basis, rng), self._draw(basis, rng)
        summed = ParameterDraw({key: d1.values[key] + d2.values[key] for key in d1.values})
        f = evaluate_smooth(basis, summed, data)
        assert np.allclose(f, evaluate_smooth(basis, d1, data) + evaluate_smooth(basis, d2, data))

    def test_missing_penalized_coefficient_raises(self):
        data = _toy_data(n=10)
        basis = build_smooth(data, k=10)
        with pytest.raises(ParameterError):
            evaluate_smooth(basis, ParameterDraw({"beta_s1": 1.0, "beta_s2": 0.0}), data)

    def test_minimum_basis_has_no_penalized_columns(self):
        # k=6 -> kappa=3 knots, all absorbed by the 3-dim null space
        data = _toy_data()
        basis = build_smooth(data, k=6)
        assert basis.L == 0
        f = evaluate_smooth(basis, ParameterDraw({"beta_s1": 1.0, "beta_s2": 2.0}), data)
        x1, _ = design_matrix(basis, data)
        assert np.allclose(f, x1 @ np.array([1.0, 2.0]))
