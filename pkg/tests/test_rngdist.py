"""Seeded-stream determinism and distribution correctness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qoicheck.rngdist import (
    ParameterError,
    SeedStream,
    TruncationInfeasibleError,
    sample_beta_mean_precision,
    sample_group_assignment,
    sample_normal,
    sample_truncated_normal_positive,
    sample_uniform,
)


class TestSeedStream:
    def test_same_identity_same_sequence(self):
        a = SeedStream(7, 3).rng.random(100)
        b = SeedStream(7, 3).rng.random(100)
        assert np.array_equal(a, b)

    def test_distinct_stream_ids_differ(self):
        a = SeedStream(7, 3).rng.random(100)
        b = SeedStream(7, 4).rng.random(100)
        assert not np.array_equal(a, b)

    def test_child_is_deterministic_in_tag(self):
        root = SeedStream(7, 3)
        assert root.child("fit").stream_id == SeedStream(7, 3).child("fit").stream_id
        assert root.child("fit").stream_id != root.child("prior").stream_id

    def test_child_accepts_int_and_str_tags(self):
        root = SeedStream(1, 0)
        assert root.child(5).stream_id != root.child("5").stream_id

    def test_nested_children_independent_of_sibling_use(self):
        root = SeedStream(11, 2)
        a = root.child("a")
        a.rng.random(1000)  # consuming a sibling must not shift b
        b_after = root.child("b").rng.random(5)
        b_fresh = SeedStream(11, 2).child("b").rng.random(5)
        assert np.array_equal(b_after, b_fresh)

    @given(seed=st.integers(min_value=0, max_value=2**64 - 1),
           sid=st.integers(min_value=0, max_value=2**64 - 1))
    @settings(max_examples=50, deadline=None)
    def test_identity_reproducible_property(self, seed, sid):
        assert SeedStream(seed, sid).rng.random() == SeedStream(seed, sid).rng.random()


class TestDistributions:
    def test_normal_moments(self):
        draws = sample_normal(2.0, 3.0, SeedStream(5, 0), size=200_000)
        assert abs(draws.mean() - 2.0) < 4 * 3.0 / np.sqrt(draws.size)
        assert abs(draws.std() - 3.0) < 0.05

    def test_normal_rejects_bad_sd(self):
        with pytest.raises(ParameterError):
            sample_normal(0.0, 0.0, SeedStream(5, 0))
        with pytest.raises(ParameterError):
            sample_normal(np.nan, 1.0, SeedStream(5, 0))

    def test_truncated_normal_positive_matches_truncnorm(self):
        loc, sd = 0.5, 0.4
        draws = sample_truncated_normal_positive(loc, sd, SeedStream(6, 0), size=50_000)
        assert (draws > 0).all()
        ref = stats.truncnorm(a=(0 - loc) / sd, b=np.inf, loc=loc, scale=sd)
        ks = stats.kstest(draws, ref.cdf).statistic
        assert ks < 0.01

    def test_truncated_normal_infeasible_raises(self):
        with pytest.raises(TruncationInfeasibleError):
            sample_truncated_normal_positive(-60.0, 1.0, SeedStream(6, 1), max_attempts=100)

    def test_beta_mean_precision_shapes(self):
        mu, phi = 0.25, 8.0
        draws = sample_beta_mean_precision(mu, phi, SeedStream(7, 0), size=50_000)
        ks = stats.kstest(draws, stats.beta(mu * phi, (1 - mu) * phi).cdf).statistic
        assert ks < 0.01

    def test_beta_rejects_out_of_range_mean(self):
        with pytest.raises(ParameterError):
            sample_beta_mean_precision(1.0, 4.0, SeedStream(7, 1))

    def test_uniform_bounds_and_order(self):
        draws = sample_uniform(0.0, 2.0, SeedStream(8, 0), size=10_000)
        assert draws.min() >= 0.0 and draws.max() <= 2.0
        with pytest.raises(ParameterError):
            sample_uniform(2.0, 2.0, SeedStream(8, 1))

    def test_group_assignment_covers_levels_with_replacement(self):
        g = sample_group_assignment(500, 20, SeedStream(9, 0))
        assert g.min() >= 1 and g.max() <= 20
        counts = np.bincount(g, minlength=21)[1:]
        # with replacement: counts vary, none astronomically far from N/G
        assert counts.sum() == 500
        assert counts.std() > 0

    def test_scalar_draws_are_floats(self):
        assert isinstance(sample_normal(0.0, 1.0, SeedStream(1, 0)), float)
        assert isinstance(sample_uniform(0.0, 1.0, SeedStream(1, 1)), float)
        assert isinstance(sample_beta_mean_precision(0.5, 2.0, SeedStream(1, 2)), float)
