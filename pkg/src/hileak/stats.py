"""Streaming statistics, Welch's t-test, threshold correction and TOST.

All accumulators are float64 regardless of sample storage precision; the
single-pass Welford update avoids the cancellation errors of naive two-pass
variance computation on large trace counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, t as student_t

#: |t| threshold conventionally paired with alpha=1e-5 for a single test.
DEFAULT_ALPHA = 1e-5

#: degrees of freedom beyond which the Student quantile is replaced by the
#: Gaussian quantile (indistinguishable at double precision for our alphas).
GAUSSIAN_DOF = 1e4


@dataclass
class Moments:
    """Mergeable running mean / sum-of-squared-deviations accumulator."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> "Moments":
        """Welford single-pass update with a new sample."""
        if not math.isfinite(x):
            raise ValueError(f"non-finite sample {x!r}")
        n = self.n + 1
        delta = x - self.mean
        mean = self.mean + delta / n
        m2 = self.m2 + delta * (x - mean)
        return Moments(n, mean, m2)

    def update_many(self, xs) -> "Moments":
        m = self
        for x in xs:
            m = m.update(x)
        return m

    def merge(self, other: "Moments") -> "Moments":
        """Chan-style pairwise combination; equals moments of concatenation."""
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def variance(self) -> float:
        if self.n < 2:
            return 0.0
        return self.m2 / (self.n - 1)

    @classmethod
    def from_samples(cls, xs) -> "Moments":
        xs = np.asarray(xs, dtype=np.float64)
        if xs.size == 0:
            return cls()
        if not np.isfinite(xs).all():
            raise ValueError("non-finite sample in input")
        mean = float(xs.mean())
        m2 = float(((xs - mean) ** 2).sum())
        return cls(int(xs.size), mean, m2)


@dataclass
class WelchResult:
    t: float
    dof: float


def welch_t(a: Moments, b: Moments) -> WelchResult:
    """Welch's two-sample t statistic and its degrees of freedom.

    The sign follows mean(a) - mean(b).  Two zero-variance populations with
    equal means give t = 0; with different means the t is infinite, signalled
    with t = +/-inf and dof = nan.
    """
    if a.n < 2 or b.n < 2:
        raise ValueError("welch_t needs n >= 2 in both populations")
    va, vb = a.variance, b.variance
    diff = a.mean - b.mean
    se2 = va / a.n + vb / b.n
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(a.n + b.n - 2))
        return WelchResult(math.copysign(math.inf, diff), math.nan)
    dof = se2 * se2 / ((va / a.n) ** 2 / (a.n - 1) + (vb / b.n) ** 2 / (b.n - 1))
    return WelchResult(diff / math.sqrt(se2), dof)


def welch_t_arrays(mean_a, var_a, n_a, mean_b, var_b, n_b):
    """Vectorized Welch t and dof over numpy arrays of per-point statistics."""
    mean_a = np.asarray(mean_a, dtype=np.float64)
    var_a = np.asarray(var_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    var_b = np.asarray(var_b, dtype=np.float64)
    ra = var_a / n_a
    rb = var_b / n_b
    se2 = ra + rb
    diff = mean_a - mean_b
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / np.sqrt(se2)
        dof = se2 * se2 / (ra * ra / (n_a - 1) + rb * rb / (n_b - 1))
    zero = se2 == 0.0
    if np.any(zero):
        t = np.where(zero & (diff == 0.0), 0.0, t)
        t = np.where(zero & (diff != 0.0), np.copysign(np.inf, diff), t)
        dof = np.where(zero, np.nan, dof)
    return t, dof


def two_sided_quantile(alpha: float, dof: float) -> float:
    """|t| cutoff for a two-sided test at level alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    p = alpha / 2.0
    if not math.isfinite(dof) or dof > GAUSSIAN_DOF:
        return float(-norm.ppf(p))
    return float(-student_t.ppf(p, dof))


def one_sided_quantile(alpha: float, dof: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not math.isfinite(dof) or dof > GAUSSIAN_DOF:
        return float(-norm.ppf(alpha))
    return float(-student_t.ppf(alpha, dof))


def corrected_threshold(n_comparisons: int, alpha: float = DEFAULT_ALPHA,
                        dof: float = math.inf) -> float:
    """Family-wise |t| threshold for n simultaneous comparisons.

    The per-comparison level is the Sidak split 1 - (1 - alpha)^(1/n); the
    threshold is the two-sided Student quantile at that level (Gaussian for
    very large dof).  Monotone non-decreasing in n_comparisons.  For a single
    comparison at alpha=1e-5 this gives ~4.42, the value conventionally
    rounded up to the 4.5 operating threshold.
    """
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    # -expm1(log1p(-a)/n) keeps precision for tiny per-comparison levels
    alpha_per = -math.expm1(math.log1p(-alpha) / n_comparisons)
    return two_sided_quantile(alpha_per, dof)


@dataclass
class TostBounds:
    """Equivalence interval for a mean difference.

    lower/upper bracket the target mean difference; alpha is the level used
    by the one-sided tests in not_leaky.  degenerate marks intervals that
    collapsed onto the target because the supplied distribution had zero
    spread.
    """

    target_mu: float
    s: float
    n: int
    alpha: float
    lower: float
    upper: float
    degenerate: bool = False


def tost_bounds(mu: float, mean_diff_samples, alpha: float = 0.05) -> TostBounds:
    """Pardo-Scott boundaries mu +/- t_alpha * s / sqrt(n).

    s and n are the standard deviation and cardinality of the supplied
    mean-difference distribution.
    """
    xs = np.asarray(mean_diff_samples, dtype=np.float64)
    if xs.size < 2:
        raise ValueError("mean_diff_samples needs at least 2 values")
    n = int(xs.size)
    s = float(xs.std(ddof=1))
    if s == 0.0:
        return TostBounds(mu, 0.0, n, alpha, mu, mu, degenerate=True)
    half = one_sided_quantile(alpha, n - 1) * s / math.sqrt(n)
    return TostBounds(mu, s, n, alpha, mu - half, mu + half)


def companion_bounds(z_companion, alpha: float = 0.05, splits: int = 100,
                     margin_z: float = 4.5, seed: int = 0) -> TostBounds:
    """Equivalence bounds for combined-trace values from an all-random run.

    Repeated random half-splits of the companion values estimate the sampling
    spread of a fixed-vs-random mean difference under the no-leak null; the
    interval is the target +/- margin_z times that spread, wide enough that a
    genuinely leak-free difference passes TOST while a confirmed leak (|t|
    above the corrected threshold) cannot.  splits=0 uses the closed form of
    the half-split spread, 2*std/sqrt(n), instead of resampling.
    """
    z = np.asarray(z_companion, dtype=np.float64)
    if z.size < 4:
        raise ValueError("companion run too small for half-splitting")
    if splits == 0:
        s_d = 2.0 * float(z.std(ddof=1)) / math.sqrt(z.size)
        splits = 1
    else:
        rng = np.random.default_rng(seed)
        half = z.size // 2
        diffs = np.empty(splits)
        for r in range(splits):
            perm = rng.permutation(z.size)
            diffs[r] = z[perm[:half]].mean() - z[perm[half:2 * half]].mean()
        s_d = float(diffs.std(ddof=1))
    if s_d == 0.0:
        return TostBounds(0.0, 0.0, splits, alpha, 0.0, 0.0, degenerate=True)
    margin = margin_z * s_d
    return TostBounds(0.0, s_d, splits, alpha, -margin, margin)


def not_leaky(z_fixed, z_random, bounds: TostBounds) -> bool:
    """TOST equivalence: is the fixed-vs-random mean difference inside bounds?

    True iff the difference is significantly below bounds.upper AND
    significantly above bounds.lower, both at bounds.alpha.
    """
    zf = np.asarray(z_fixed, dtype=np.float64)
    zr = np.asarray(z_random, dtype=np.float64)
    if zf.size < 2 or zr.size < 2:
        raise ValueError("not_leaky needs n >= 2 per class")
    mf = Moments.from_samples(zf)
    mr = Moments.from_samples(zr)
    diff = mf.mean - mr.mean
    se2 = mf.variance / mf.n + mr.variance / mr.n
    if se2 == 0.0:
        return bounds.lower <= diff <= bounds.upper
    se = math.sqrt(se2)
    dof = se2 * se2 / ((mf.variance / mf.n) ** 2 / (mf.n - 1)
                       + (mr.variance / mr.n) ** 2 / (mr.n - 1))
    t_crit = one_sided_quantile(bounds.alpha, dof)
    below_upper = (diff - bounds.upper) / se < -t_crit
    above_lower = (diff - bounds.lower) / se > t_crit
    return bool(below_upper and above_lower)
