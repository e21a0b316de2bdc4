"""Attribute a multivariate leak to (sample point, model component) pairs.

Two strategies.  Component elimination removes one component at one leak
point at a time and asks, via TOST equivalence against an all-random
companion run, whether the leak is gone; it pinpoints single culprits but
returns nothing when several components redundantly carry the same share.
The Monte-Carlo fallback estimates each component's contribution from random
reduced-model experiments and keeps the pairs whose removal measurably
weakens the leak, which handles the redundant case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import FIXED, RANDOM
from .combiner import LeakPoint
from .stats import (Moments, welch_t, companion_bounds, not_leaky, TostBounds)
from .tracestore import ComponentMatrix

ELIMINATION = "ELIMINATION"
MONTE_CARLO = "MONTE_CARLO"
UNRESOLVED = "UNRESOLVED"

DEFAULT_EXPERIMENTS = 50
#: fraction of |t| that removing a culprit pair must shave off.  Kept low:
#: the component matrix is noise-free, so removing a partial carrier also
#: shrinks the product's spread and the ratio lands nearer 1 than the
#: coefficient share would suggest.
RELEVANCE_DROP = 0.1


@dataclass
class RootCause:
    leak: LeakPoint
    culprits: set          # of (sample_index, component_index)
    method: str
    stats: "MonteCarloStats | None" = None

    def to_dict(self, component_names=None) -> dict:
        culprits = []
        for s, t in sorted(self.culprits):
            entry = {"sample": int(s), "component": int(t)}
            if component_names is not None:
                entry["name"] = component_names[t]
            culprits.append(entry)
        return {"leak": [int(p) for p in self.leak.index.points],
                "t": float(self.leak.t_value),
                "method": self.method,
                "culprits": culprits}


@dataclass
class MonteCarloStats:
    """Per-component participation ledger over the random experiments."""

    participated: np.ndarray        # (n_components,) int
    leaky_when_in: np.ndarray       # (n_components,) int
    leaky_when_out: np.ndarray      # (n_components,) int
    subsets: np.ndarray             # (experiments, n_components) bool
    leaky: np.ndarray               # (experiments,) bool

    @property
    def experiments(self) -> int:
        return int(self.leaky.size)

    def rate_difference(self, upto: int | None = None) -> np.ndarray:
        """leaky-rate-when-included minus leaky-rate-when-excluded, using the
        first `upto` experiments (all by default)."""
        k = self.experiments if upto is None else min(upto, self.experiments)
        inc = self.subsets[:k]
        leaky = self.leaky[:k]
        n_in = inc.sum(axis=0)
        n_out = k - n_in
        with np.errstate(invalid="ignore"):
            r_in = (leaky[:, None] & inc).sum(axis=0) / n_in
            r_out = (leaky[:, None] & ~inc).sum(axis=0) / n_out
        diff = r_in - r_out
        diff[(n_in == 0) | (n_out == 0)] = 0.0
        return diff


def nps(L: ComponentMatrix, S, C, coefficients) -> np.ndarray:
    """Normalised product of samples under a reduced component model.

    Reduced power at each point j in S is the coefficient-weighted sum over
    the components in C; values are mean-centered per point across all
    traces, then multiplied per trace over S.
    """
    S = list(S)
    C = list(C)
    if not S or not C:
        raise ValueError("nps needs non-empty sample and component sets")
    coeff = np.asarray(coefficients, dtype=np.float64)
    out = None
    for j in S:
        block = L.point(j)                       # (n_components, n_traces)
        p = coeff[C] @ block[C]
        p -= p.mean()
        out = p if out is None else out * p
    return out


def _class_t(z: np.ndarray, labels: np.ndarray) -> float:
    zf = Moments.from_samples(z[labels == FIXED])
    zr = Moments.from_samples(z[labels == RANDOM])
    return welch_t(zf, zr).t


def flc(L: ComponentMatrix, labels: np.ndarray, S, coefficients,
        companion: ComponentMatrix, alpha: float = 0.05,
        margin_z: float = 4.5) -> set:
    """Find-leaky-components by elimination.

    For each leak point s, the product over the remaining points under the
    full model is combined with s under the model less one component; the
    pair is a culprit when the result is statistically equivalent (TOST) to
    the no-leak null, whose equivalence bounds come from the matching
    combination on the all-random companion run.  Empty result means no
    single removal kills the leak (redundant culprits).
    """
    S = list(S)
    C = list(range(L.n_components))
    coeff = np.asarray(coefficients, dtype=np.float64)
    culprits = set()
    for s in S:
        rest = [j for j in S if j != s]
        x = nps(L, rest, C, coeff) if rest else np.ones(L.n_traces)
        x_comp = nps(companion, rest, C, coeff) if rest else np.ones(companion.n_traces)
        block = L.point(s)
        block_comp = companion.point(s)
        full = coeff @ block
        full_comp = coeff @ block_comp
        for t in C:
            p = full - coeff[t] * block[t]
            p -= p.mean()
            z = p * x
            pc = full_comp - coeff[t] * block_comp[t]
            pc -= pc.mean()
            z_comp = pc * x_comp
            bounds = companion_bounds(z_comp, alpha=alpha, splits=0,
                                      margin_z=margin_z)
            if not_leaky(z[labels == FIXED], z[labels == RANDOM], bounds):
                culprits.add((int(s), int(t)))
    return culprits


def _relevant_pairs(L: ComponentMatrix, labels: np.ndarray, S, coefficients,
                    threshold: float, candidates=None,
                    drop: float = RELEVANCE_DROP) -> set:
    """Pairs (s, t) whose single removal shaves at least `drop` of |t| off
    the combined statistic, or pushes it below the detection threshold."""
    S = list(S)
    C = list(range(L.n_components))
    coeff = np.asarray(coefficients, dtype=np.float64)
    t_full = abs(_class_t(nps(L, S, C, coeff), labels))
    pairs = set()
    for s in S:
        rest = [j for j in S if j != s]
        x = nps(L, rest, C, coeff) if rest else np.ones(L.n_traces)
        block = L.point(s)
        full = coeff @ block
        comps = C if candidates is None else sorted(candidates)
        for t in comps:
            if coeff[t] == 0.0 or np.all(block[t] == block[t][0]):
                continue
            p = full - coeff[t] * block[t]
            p -= p.mean()
            t_red = abs(_class_t(p * x, labels))
            if t_red < threshold or t_red <= (1.0 - drop) * t_full:
                pairs.add((int(s), int(t)))
    return pairs


def monte_carlo(L: ComponentMatrix, labels: np.ndarray, S, coefficients,
                threshold: float, experiments: int = DEFAULT_EXPERIMENTS,
                seed: int = 0, drop: float = RELEVANCE_DROP):
    """Monte-Carlo component attribution.

    Each experiment keeps a balanced random half of the components (every
    component participates in exactly half the experiments) and re-tests the
    leak on the reduced model, building per-component leaky-rate statistics.
    Because redundant carriers depress each other's rate difference below
    any fixed cutoff, the culprit decision is the per-pair relevance test:
    (s, t) is a culprit when removing t at s alone weakens the leak by at
    least `drop` or below the threshold.  Returns (culprits, stats).
    """
    if experiments < 1:
        raise ValueError("experiments must be >= 1")
    S = list(S)
    n_comp = L.n_components
    coeff = np.asarray(coefficients, dtype=np.float64)
    rng = np.random.default_rng(seed)

    # balanced participation: each component is in exactly half the runs
    subsets = np.zeros((experiments, n_comp), dtype=bool)
    half = experiments // 2
    for c in range(n_comp):
        rows = rng.permutation(experiments)[:half]
        subsets[rows, c] = True

    leaky = np.zeros(experiments, dtype=bool)
    for e in range(experiments):
        C_e = np.flatnonzero(subsets[e])
        if C_e.size == 0 or not np.any(coeff[C_e] != 0.0):
            continue
        z = nps(L, S, list(C_e), coeff)
        if z.std() == 0.0:
            continue
        leaky[e] = abs(_class_t(z, labels)) >= threshold

    stats = MonteCarloStats(
        participated=subsets.sum(axis=0),
        leaky_when_in=(leaky[:, None] & subsets).sum(axis=0),
        leaky_when_out=(leaky[:, None] & ~subsets).sum(axis=0),
        subsets=subsets, leaky=leaky,
    )
    culprits = _relevant_pairs(L, labels, S, coeff, threshold, drop=drop)
    return culprits, stats


def reduction_curve(L: ComponentMatrix, labels: np.ndarray, S, coefficients,
                    stats: MonteCarloStats, counts, cutoff: float = 0.2):
    """|t| after removing the components flagged by the first k experiments,
    for each k in counts.  The curve flattens once enough experiments have
    stabilized the flagged set."""
    S = list(S)
    coeff = np.asarray(coefficients, dtype=np.float64)
    C = list(range(L.n_components))
    out = []
    for k in counts:
        diff = stats.rate_difference(upto=k)
        flagged = set(np.flatnonzero(diff > cutoff).tolist())
        keep = [c for c in C if c not in flagged]
        if not keep:
            out.append(0.0)
            continue
        z = nps(L, S, keep, coeff)
        out.append(abs(_class_t(z, labels)) if z.std() > 0 else 0.0)
    return out


def analyze_leak(L: ComponentMatrix, labels: np.ndarray, leak: LeakPoint,
                 coefficients, companion: ComponentMatrix, threshold: float,
                 experiments: int = DEFAULT_EXPERIMENTS, seed: int = 0,
                 alpha: float = 0.05) -> RootCause:
    """Root-cause one confirmed leak: elimination first, Monte-Carlo fallback,
    UNRESOLVED when neither attributes it.

    If the noise-free component model does not itself reproduce the leak at
    S, no removal experiment is meaningful (everything would look equivalent
    to the null) and the cause is UNRESOLVED outright.
    """
    S = list(leak.index.points)
    C = list(range(L.n_components))
    t_model = abs(_class_t(nps(L, S, C, coefficients), labels))
    if t_model < threshold:
        return RootCause(leak=leak, culprits=set(), method=UNRESOLVED)
    culprits = flc(L, labels, S, coefficients, companion, alpha=alpha)
    if culprits:
        return RootCause(leak=leak, culprits=culprits, method=ELIMINATION)
    culprits, stats = monte_carlo(L, labels, S, coefficients, threshold,
                                  experiments=experiments, seed=seed)
    if culprits:
        return RootCause(leak=leak, culprits=culprits, method=MONTE_CARLO,
                         stats=stats)
    return RootCause(leak=leak, culprits=set(), method=UNRESOLVED, stats=stats)


def write_report(causes, path: str, component_names=None):
    doc = [c.to_dict(component_names) for c in causes]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
