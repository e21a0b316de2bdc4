"""Welch t-test, Moments accumulators, threshold correction and TOST."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hileak.stats import (Moments, TostBounds, companion_bounds,
                          corrected_threshold, not_leaky, one_sided_quantile,
                          tost_bounds, two_sided_quantile, welch_t,
                          welch_t_arrays)
from conftest import welch_two_pass


class TestMoments:
    def test_single_update(self):
        m = Moments().update(5.0)
        assert (m.n, m.mean, m.m2) == (1, 5.0, 0.0)

    def test_stream_small(self):
        m = Moments().update_many([1, 2, 3, 4])
        assert m.mean == pytest.approx(2.5)
        assert m.variance == pytest.approx(5 / 3)

    def test_shifted_data_cancellation(self):
        # naive two-pass sum-of-squares loses these digits
        m = Moments().update_many([1e9 + 0, 1e9 + 1, 1e9 + 2])
        assert m.variance == pytest.approx(1.0, rel=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Moments().update(math.nan)
        with pytest.raises(ValueError):
            Moments.from_samples([1.0, math.inf])

    def test_merge_equals_concatenation(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=50)
        b = rng.normal(size=70)
        merged = Moments.from_samples(a).merge(Moments.from_samples(b))
        whole = Moments.from_samples(np.concatenate([a, b]))
        assert merged.n == whole.n
        assert merged.mean == pytest.approx(whole.mean, rel=1e-12)
        assert merged.m2 == pytest.approx(whole.m2, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20),
           st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20),
           st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20))
    def test_merge_associative(self, xs, ys, zs):
        a, b, c = (Moments.from_samples(v) for v in (xs, ys, zs))
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        assert left.n == right.n
        assert left.mean == pytest.approx(right.mean, rel=1e-10, abs=1e-10)
        assert left.m2 == pytest.approx(right.m2, rel=1e-10, abs=1e-6)


class TestWelch:
    def test_identical_populations(self):
        m = Moments.from_samples([1.0, 2.0, 3.0])
        assert welch_t(m, m).t == 0.0

    def test_frozen_example(self):
        a = Moments.from_samples([1, 2, 3, 4])
        b = Moments.from_samples([5, 6, 7, 8])
        res = welch_t(a, b)
        assert res.t == pytest.approx(-4.3818, abs=1e-4)
        assert res.dof == pytest.approx(6.0, abs=1e-4)

    def test_equal_variance_large_n_dof(self):
        # s1 = s2, n1 = n2 = 1000 collapses the dof formula to 2(n-1)
        a = Moments(n=1000, mean=0.0, m2=999.0)
        b = Moments(n=1000, mean=0.1, m2=999.0)
        assert welch_t(a, b).dof == pytest.approx(1998.0, rel=1e-9)

    def test_antisymmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = Moments.from_samples(rng.normal(size=30))
            b = Moments.from_samples(rng.normal(1.0, 2.0, size=40))
            assert welch_t(a, b).t == -welch_t(b, a).t

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            xs = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3),
                            size=rng.integers(2, 200))
            ys = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3),
                            size=rng.integers(2, 200))
            got = welch_t(Moments.from_samples(xs), Moments.from_samples(ys))
            t_ref, dof_ref = welch_two_pass(xs, ys)
            assert got.t == pytest.approx(t_ref, rel=1e-9)
            assert got.dof == pytest.approx(dof_ref, rel=1e-9)

    def test_degenerate_cases(self):
        flat = Moments.from_samples([2.0, 2.0, 2.0])
        assert welch_t(flat, flat).t == 0.0
        other = Moments.from_samples([3.0, 3.0])
        res = welch_t(flat, other)
        assert math.isinf(res.t) and res.t < 0
        with pytest.raises(ValueError):
            welch_t(Moments.from_samples([1.0]), flat)

    def test_array_form_matches_scalar(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(100, 6))
        b = rng.normal(size=(120, 6))
        t, dof = welch_t_arrays(a.mean(0), a.var(0, ddof=1), 100,
                                b.mean(0), b.var(0, ddof=1), 120)
        for j in range(6):
            ref = welch_t(Moments.from_samples(a[:, j]),
                          Moments.from_samples(b[:, j]))
            assert t[j] == pytest.approx(ref.t, rel=1e-12)
            assert dof[j] == pytest.approx(ref.dof, rel=1e-12)


class TestCorrectedThreshold:
    def test_single_comparison_near_4_5(self):
        # operating threshold conventionally rounded up to 4.5
        assert corrected_threshold(1, 1e-5) == pytest.approx(4.4172, abs=0.01)

    def test_bivariate_1000_samples(self):
        n = 1000 * 999 // 2 + 1000
        assert corrected_threshold(n, 1e-5) == pytest.approx(6.71, abs=0.05)

    def test_monotone_in_comparisons(self):
        assert corrected_threshold(10 ** 6, 1e-5) > corrected_threshold(10 ** 3, 1e-5)

    def test_equals_plain_quantile_for_one(self):
        for alpha in (0.05, 1e-3, 1e-5):
            for dof in (5.0, 100.0, math.inf):
                assert corrected_threshold(1, alpha, dof) == pytest.approx(
                    two_sided_quantile(alpha, dof), rel=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            corrected_threshold(0, 0.05)
        with pytest.raises(ValueError):
            corrected_threshold(10, 1.5)

    @settings(max_examples=100, deadline=None)
    @given(n1=st.integers(1, 10 ** 7), n2=st.integers(1, 10 ** 7),
           alpha=st.floats(1e-9, 0.2))
    def test_monotonicity_property(self, n1, n2, alpha):
        lo, hi = sorted((n1, n2))
        assert corrected_threshold(lo, alpha) <= corrected_threshold(hi, alpha) + 1e-12


class TestTost:
    def test_degenerate_spread_collapses(self):
        b = tost_bounds(0.5, [1.0, 1.0, 1.0])
        assert b.lower == b.upper == 0.5
        assert b.degenerate

    def test_tabulated_quantile_case(self):
        # mu=0, s=1, n=100: half-width is t_.05(99)/10 = 0.1660
        rng = np.random.default_rng(4)
        xs = rng.normal(size=100)
        xs = (xs - xs.mean()) / xs.std(ddof=1)  # exact s=1
        b = tost_bounds(0.0, xs, alpha=0.05)
        assert b.upper == pytest.approx(0.1660, abs=2e-4)
        assert b.lower == pytest.approx(-0.1660, abs=2e-4)

    def test_width_shrinks_with_root_n(self):
        rng = np.random.default_rng(5)
        xs = rng.normal(size=100)
        small = tost_bounds(0.0, xs)
        # duplicating the data doubles n at (nearly) unchanged s
        big = tost_bounds(0.0, np.concatenate([xs, xs]))
        assert (small.upper - small.lower) / (big.upper - big.lower) == \
            pytest.approx(math.sqrt(2.0), rel=0.02)

    def test_not_leaky_identical_classes(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=500)
        b = TostBounds(0.0, 1.0, 100, 0.05, -0.5, 0.5)
        assert not_leaky(z, z, b)

    def test_not_leaky_rejects_big_difference(self):
        rng = np.random.default_rng(7)
        b = TostBounds(0.0, 1.0, 100, 0.05, -0.1, 0.1)
        assert not not_leaky(rng.normal(5.0, 1.0, 200), rng.normal(0.0, 1.0, 200), b)

    def test_planted_equivalence_rate(self):
        # two draws from one Gaussian, bounds from a third draw
        rng = np.random.default_rng(8)
        hits = 0
        for _ in range(1000):
            companion = rng.normal(size=400)
            bounds = companion_bounds(companion, splits=0)
            zf = rng.normal(size=200)
            zr = rng.normal(size=200)
            hits += not_leaky(zf, zr, bounds)
        assert hits >= 950

    def test_companion_bounds_modes(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=2000)
        analytic = companion_bounds(z, splits=0)
        resampled = companion_bounds(z, splits=200, seed=3)
        assert analytic.upper == pytest.approx(resampled.upper, rel=0.25)
        with pytest.raises(ValueError):
            companion_bounds(z[:3])

    def test_one_sided_quantile_sanity(self):
        assert one_sided_quantile(0.05, math.inf) == pytest.approx(1.6449, abs=1e-4)
        assert one_sided_quantile(0.05, 99) == pytest.approx(1.6604, abs=1e-4)
