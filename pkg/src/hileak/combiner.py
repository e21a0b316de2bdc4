"""On-the-fly multivariate (bivariate/trivariate) fixed-vs-random t-tests.

Combined traces are mean-centered products of sample points.  They are never
materialized: each work unit accumulates per-combination sums directly from
column blocks of the original traces, so the working set grows with
n_traces * block_width rather than with n_traces * C(m, 2).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import FIXED, RANDOM
from .stats import corrected_threshold, welch_t_arrays, DEFAULT_ALPHA
from .tracestore import TraceSet

DEFAULT_WINDOW = 50


@dataclass(frozen=True)
class CombinationIndex:
    """Ordered tuple of 2 or 3 sample-point indices."""

    points: tuple

    def __post_init__(self):
        if len(self.points) not in (2, 3):
            raise ValueError("combination order must be 2 or 3")
        if list(self.points) != sorted(self.points):
            raise ValueError("points must be ordered")


@dataclass
class LeakPoint:
    index: CombinationIndex
    t_value: float
    dof: float


@dataclass
class Heatmap:
    """t-values over the combination index space.

    Dense symmetric matrix for order 2; sparse (indices, t) lists for
    order 3.  Thresholding is done in float64; exports downcast to float32.
    """

    order: int
    n_samples: int
    t_matrix: np.ndarray | None = None          # (m, m) for order 2
    indices: np.ndarray | None = None           # (k, 3) for order 3
    t_values: np.ndarray | None = None          # (k,) for order 3

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.order == 2:
                w.writerow(["j1", "j2", "t"])
                m = self.n_samples
                for j1 in range(m):
                    for j2 in range(j1, m):
                        w.writerow([j1, j2, float(np.float32(self.t_matrix[j1, j2]))])
            else:
                w.writerow(["j1", "j2", "j3", "t"])
                for (j1, j2, j3), t in zip(self.indices, self.t_values):
                    w.writerow([int(j1), int(j2), int(j3), float(np.float32(t))])

    def to_pgm(self, path: str, threshold: float):
        """16-bit PGM of |t| clipped at 2x threshold (order 2 only)."""
        if self.order != 2:
            raise ValueError("PGM export is defined for order 2 only")
        clip = 2.0 * threshold
        img = np.clip(np.abs(self.t_matrix), 0.0, clip) / clip
        img = (img * 65535.0).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode())
            fh.write(img.tobytes())


@dataclass
class AnalysisResult:
    heatmap: Heatmap
    leaks: list
    threshold: float
    n_comparisons: int
    min_dof: float
    alpha: float


@dataclass(frozen=True)
class WorkUnit:
    """A pair of contiguous column blocks; covers all pairs (j1 in rows,
    j2 in cols, j1 <= j2)."""

    rows: tuple  # (start, stop)
    cols: tuple


def partition_workload(n_samples: int, splits: int) -> list[WorkUnit]:
    """S(S+1)/2 block-pair work units covering every pair index exactly once."""
    if not 1 <= splits <= n_samples:
        raise ValueError(f"splits must be in [1, {n_samples}], got {splits}")
    edges = np.linspace(0, n_samples, splits + 1).astype(int)
    blocks = [(int(edges[i]), int(edges[i + 1])) for i in range(splits)]
    return [WorkUnit(blocks[i], blocks[j])
            for i in range(splits) for j in range(i, splits)]


def center(ts: TraceSet) -> np.ndarray:
    """Per-sample-point means (float64).  Centered value at (i, j) is
    samples[i, j] - means[j]."""
    if ts.n_traces < 2:
        raise ValueError("centering needs at least 2 traces")
    return ts.samples.mean(axis=0, dtype=np.float64)


def combined_value(ts: TraceSet, means: np.ndarray, i: int,
                   idx: CombinationIndex) -> float:
    """Mean-centered product for one trace at one combination index."""
    prod = 1.0
    for j in idx.points:
        prod *= float(ts.samples[i, j]) - float(means[j])
    return prod


def _class_split(fixed: TraceSet, random: TraceSet | None):
    """Accept either (mixed set, None) or (fixed set, random set)."""
    if random is None:
        fixed.require_both_classes()
        f = fixed.samples[fixed.labels == FIXED]
        r = fixed.samples[fixed.labels == RANDOM]
    else:
        f = fixed.samples
        r = random.samples
        if f.shape[1] != r.shape[1]:
            raise ValueError("fixed and random sets must share n_samples")
    return f, r


def _pair_stats(a: np.ndarray, b: np.ndarray):
    """Sums of products and squared products for all column pairs of two
    centered blocks; returns (mean, var) with shape (wa, wb)."""
    n = a.shape[0]
    s1 = a.T @ b
    s2 = (a * a).T @ (b * b)
    mean = s1 / n
    var = (s2 - s1 * s1 / n) / (n - 1)
    np.maximum(var, 0.0, out=var)
    return mean, var


def _order2_scan(f: np.ndarray, r: np.ndarray, splits: int, threads: int):
    m = f.shape[1]
    fm = f.mean(axis=0, dtype=np.float64)
    rm = r.mean(axis=0, dtype=np.float64)
    t_mat = np.zeros((m, m))
    dof_mat = np.zeros((m, m))
    units = partition_workload(m, splits)

    def run_unit(u: WorkUnit):
        r0, r1 = u.rows
        c0, c1 = u.cols
        af = f[:, r0:r1].astype(np.float64) - fm[r0:r1]
        bf = f[:, c0:c1].astype(np.float64) - fm[c0:c1]
        ar = r[:, r0:r1].astype(np.float64) - rm[r0:r1]
        br = r[:, c0:c1].astype(np.float64) - rm[c0:c1]
        mean_f, var_f = _pair_stats(af, bf)
        mean_r, var_r = _pair_stats(ar, br)
        t, dof = welch_t_arrays(mean_f, var_f, f.shape[0], mean_r, var_r, r.shape[0])
        t_mat[r0:r1, c0:c1] = t
        dof_mat[r0:r1, c0:c1] = dof
        if u.rows != u.cols:
            t_mat[c0:c1, r0:r1] = t.T
            dof_mat[c0:c1, r0:r1] = dof.T

    if threads > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_unit, units))
    else:
        for u in units:
            run_unit(u)
    # symmetrize diagonal blocks exactly (they were computed full)
    iu = np.triu_indices(m, k=1)
    t_mat[(iu[1], iu[0])] = t_mat[iu]
    dof_mat[(iu[1], iu[0])] = dof_mat[iu]
    return t_mat, dof_mat


def _order3_scan(f: np.ndarray, r: np.ndarray, window: int, threads: int):
    m = f.shape[1]
    nf, nr = f.shape[0], r.shape[0]
    cf = f.astype(np.float64) - f.mean(axis=0, dtype=np.float64)
    cr = r.astype(np.float64) - r.mean(axis=0, dtype=np.float64)
    cf2 = cf * cf
    cr2 = cr * cr

    def scan_j1(j1):
        idx_rows = []
        t_rows = []
        dof_rows = []
        top = min(j1 + window, m)
        for j2 in range(j1 + 1, top):
            lo, hi = j2 + 1, top
            if lo >= hi:
                continue
            wf = cf[:, j1] * cf[:, j2]
            wr = cr[:, j1] * cr[:, j2]
            s1f = wf @ cf[:, lo:hi]
            s2f = (wf * wf) @ cf2[:, lo:hi]
            s1r = wr @ cr[:, lo:hi]
            s2r = (wr * wr) @ cr2[:, lo:hi]
            mean_f = s1f / nf
            var_f = np.maximum((s2f - s1f * s1f / nf) / (nf - 1), 0.0)
            mean_r = s1r / nr
            var_r = np.maximum((s2r - s1r * s1r / nr) / (nr - 1), 0.0)
            t, dof = welch_t_arrays(mean_f, var_f, nf, mean_r, var_r, nr)
            for k, j3 in enumerate(range(lo, hi)):
                idx_rows.append((j1, j2, j3))
            t_rows.append(t)
            dof_rows.append(dof)
        if not t_rows:
            return np.empty((0, 3), dtype=np.int64), np.empty(0), np.empty(0)
        return (np.array(idx_rows, dtype=np.int64),
                np.concatenate(t_rows), np.concatenate(dof_rows))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(scan_j1, range(m)))
    else:
        parts = [scan_j1(j1) for j1 in range(m)]
    indices = np.concatenate([p[0] for p in parts])
    t_vals = np.concatenate([p[1] for p in parts])
    dofs = np.concatenate([p[2] for p in parts])
    return indices, t_vals, dofs


def multivariate_ttest(fixed: TraceSet, random: TraceSet | None = None,
                       order: int = 2, window: int | None = None,
                       alpha: float = DEFAULT_ALPHA, splits: int = 4,
                       threads: int = 1,
                       include_diagonal: bool = True) -> AnalysisResult:
    """Fixed-vs-random t-test over all mean-centered sample-point products.

    Order 2 scans all unordered pairs (diagonal included by default); order 3
    scans strictly increasing triples within a sliding window.  Each class is
    centered by its own per-point means.  Reported LeakPoints exceed the
    multiple-comparison corrected threshold, computed at the minimum Welch
    dof over the scanned index space.
    """
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    f, r = _class_split(fixed, random)
    m = f.shape[1]
    if f.shape[0] < 2 or r.shape[0] < 2:
        raise ValueError("need at least 2 traces per class")

    if order == 2:
        splits = min(splits, m)
        t_mat, dof_mat = _order2_scan(f, r, splits, threads)
        if include_diagonal:
            n_comparisons = m * (m - 1) // 2 + m
            iu = np.triu_indices(m, k=0)
        else:
            n_comparisons = m * (m - 1) // 2
            iu = np.triu_indices(m, k=1)
        dofs = dof_mat[iu]
        finite = dofs[np.isfinite(dofs)]
        min_dof = float(finite.min()) if finite.size else math.inf
        threshold = corrected_threshold(n_comparisons, alpha, min_dof)
        tv = t_mat[iu]
        hot = np.abs(tv) >= threshold
        leaks = [LeakPoint(CombinationIndex((int(j1), int(j2))), float(t), float(d))
                 for j1, j2, t, d in zip(iu[0][hot], iu[1][hot], tv[hot], dofs[hot])]
        heatmap = Heatmap(order=2, n_samples=m, t_matrix=t_mat)
    else:
        window = min(window or DEFAULT_WINDOW, m)
        if window < 3:
            raise ValueError("order-3 window must cover at least 3 samples")
        indices, t_vals, dofs = _order3_scan(f, r, window, threads)
        n_comparisons = max(len(t_vals), 1)
        finite = dofs[np.isfinite(dofs)]
        min_dof = float(finite.min()) if finite.size else math.inf
        threshold = corrected_threshold(n_comparisons, alpha, min_dof)
        hot = np.abs(t_vals) >= threshold
        leaks = [LeakPoint(CombinationIndex(tuple(int(x) for x in ij)), float(t), float(d))
                 for ij, t, d in zip(indices[hot], t_vals[hot], dofs[hot])]
        heatmap = Heatmap(order=3, n_samples=m, indices=indices, t_values=t_vals)

    leaks.sort(key=lambda lp: -abs(lp.t_value))
    return AnalysisResult(heatmap=heatmap, leaks=leaks, threshold=threshold,
                          n_comparisons=n_comparisons, min_dof=min_dof, alpha=alpha)
