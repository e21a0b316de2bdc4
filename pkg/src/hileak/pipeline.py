"""Detect -> root-cause -> fix loop with an escalating trace schedule.

Each iteration emulates the current program at the scheduled trace count,
scans for multivariate leaks, attributes confirmed leaks to components and
applies barrier fixes; the fixed program feeds the next iteration.  Sample
indices are recomputed by re-emulation after every rewrite, never
translated.  The loop ends when an analysis at the maximum scheduled count
comes back clean, when leaks remain but no rewrite rule applies (residual),
or at the iteration cap.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .asm import Program
from .combiner import AnalysisResult, multivariate_ttest
from .emulator import ExperimentSpec, run_experiment
from .leakmodel import LeakageModel
from .rootcause import RootCause, analyze_leak
from .rewriter import (apply_fixes, overhead, overhead_table, plan_fixes)
from .stats import DEFAULT_ALPHA

log = logging.getLogger(__name__)

MAX_ITERATIONS = 20
#: leaks root-caused per iteration, strongest first
MAX_LEAKS_PER_ITERATION = 8

#: paper-scale schedule: 20k to 500k in steps of 20k
DEFAULT_SCHEDULE = tuple(range(20_000, 500_001, 20_000))
#: small preset for continuous-integration runs
DESK_SCHEDULE = tuple(range(5_000, 50_001, 5_000))


@dataclass
class IterationRecord:
    index: int
    n_traces: int
    threshold: float
    leaks_found: int
    leaks_fixed: int
    leaks_remaining: int
    actions: list = field(default_factory=list)       # "KIND@position"
    emulation_seconds: float = 0.0
    analysis_seconds: float = 0.0
    rootcause_seconds: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PipelineResult:
    final_program: Program
    records: list
    causes: list                 # RootCause history across iterations
    clean: bool
    residual: list               # leak dicts that could not be fixed
    initial_analysis: AnalysisResult | None
    final_analysis: AnalysisResult | None
    order: int
    threshold: float


def _iteration_seed(master: int, iteration: int) -> int:
    # distinct, deterministic per-iteration stream
    return (master * 0x9E3779B1 + iteration * 0x85EBCA77 + 1) & 0x7FFFFFFF


def run_loop(base: ExperimentSpec, model: LeakageModel, schedule=None,
             window: int | None = None, alpha: float = DEFAULT_ALPHA,
             splits: int = 4, threads: int = 1,
             experiments: int = 50,
             max_iterations: int = MAX_ITERATIONS) -> PipelineResult:
    """Run the full loop on base.kernel; returns the final program and log.

    The schedule must be strictly increasing.  Root-cause needs component
    matrices only at the leak points, so each flagged iteration re-emulates
    twice (fixed-vs-random and all-random companion) recording just those
    columns.
    """
    schedule = list(schedule if schedule is not None else DEFAULT_SCHEDULE)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be a non-empty increasing sequence")
    max_count = schedule[-1]

    program = base.kernel
    records = []
    causes_log = []
    initial_analysis = None
    final_analysis = None
    residual = []
    clean = False
    stall = 0

    for iteration in range(max_iterations):
        # escalate along the schedule; stay at the maximum once reached
        n = schedule[min(iteration, len(schedule) - 1)]
        seed = _iteration_seed(base.seed, iteration)
        spec = dataclasses.replace(base, kernel=program, n_traces=n, seed=seed)

        t0 = time.time()
        ts, _ = run_experiment(spec, model, record_components=False)
        emu_s = time.time() - t0

        t0 = time.time()
        analysis = multivariate_ttest(ts, order=base.order, window=window,
                                      alpha=alpha, splits=splits,
                                      threads=threads)
        ana_s = time.time() - t0
        if initial_analysis is None:
            initial_analysis = analysis
        final_analysis = analysis

        leaks = analysis.leaks[:MAX_LEAKS_PER_ITERATION]
        if not analysis.leaks:
            records.append(IterationRecord(
                index=iteration, n_traces=n, threshold=analysis.threshold,
                leaks_found=0, leaks_fixed=0, leaks_remaining=0,
                emulation_seconds=emu_s, analysis_seconds=ana_s))
            if n >= max_count:
                clean = True
                residual = []
                break
            continue

        t0 = time.time()
        points = sorted({p for lk in leaks for p in lk.index.points})
        _, cm = run_experiment(spec, model, record_components=True,
                               component_points=points)
        _, cm_comp = run_experiment(spec, model, record_components=True,
                                    all_random=True, component_points=points)
        causes = [analyze_leak(cm, ts.labels, lk, model.coefficients, cm_comp,
                               threshold=analysis.threshold,
                               experiments=experiments, seed=seed ^ 0x5CA1AB1E)
                  for lk in leaks]
        rc_s = time.time() - t0
        causes_log.extend(causes)

        plan = plan_fixes(program, causes, model)
        fixed_leak_points = {tuple(a.cause.leak.index.points) for a in plan}
        n_fixed = sum(1 for lk in leaks
                      if tuple(lk.index.points) in fixed_leak_points)
        records.append(IterationRecord(
            index=iteration, n_traces=n, threshold=analysis.threshold,
            leaks_found=len(analysis.leaks), leaks_fixed=n_fixed,
            leaks_remaining=len(analysis.leaks) - n_fixed,
            actions=[f"{a.kind}@{a.position}" for a in plan],
            emulation_seconds=emu_s, analysis_seconds=ana_s,
            rootcause_seconds=rc_s))

        if not plan:
            residual = [c.to_dict(model.component_names) for c in causes]
            log.warning("no applicable fixes for %d leak(s); residual",
                        len(leaks))
            if n >= max_count:
                break
            continue
        # leaks that survive several fix rounds at full trace budget are not
        # going away; report them instead of looping to the iteration cap
        stall = stall + 1 if n >= max_count else 0
        if stall >= 3:
            residual = [c.to_dict(model.component_names) for c in causes]
            log.warning("leakage persists after %d fix rounds at the maximum "
                        "trace count; residual", stall)
            break
        program = apply_fixes(program, plan)

    else:
        # iteration cap: report whatever still leaks as residual
        if final_analysis is not None and final_analysis.leaks:
            residual = residual or [
                {"leak": list(lk.index.points), "t": lk.t_value,
                 "method": "UNRESOLVED", "culprits": []}
                for lk in final_analysis.leaks]

    return PipelineResult(final_program=program, records=records,
                          causes=causes_log, clean=clean, residual=residual,
                          initial_analysis=initial_analysis,
                          final_analysis=final_analysis, order=base.order,
                          threshold=(final_analysis.threshold
                                     if final_analysis else float("nan")))


def report(result: PipelineResult, out_dir, original: Program,
           kernel_name: str = "kernel") -> dict:
    """Write the report bundle; returns the summary document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / f"{kernel_name}_fixed.s").write_text(result.final_program.emit())

    for tag, analysis in (("initial", result.initial_analysis),
                          ("final", result.final_analysis)):
        if analysis is None:
            continue
        analysis.heatmap.to_csv(str(out / f"heatmap_{tag}.csv"))
        if analysis.heatmap.order == 2:
            analysis.heatmap.to_pgm(str(out / f"heatmap_{tag}.pgm"),
                                    analysis.threshold)

    ov = overhead(original, result.final_program)
    (out / "overhead.txt").write_text(overhead_table([(kernel_name, ov)]))

    summary = {
        "kernel": kernel_name,
        "order": result.order,
        "clean": result.clean,
        "threshold": result.threshold,
        "iterations": [r.to_dict() for r in result.records],
        "causes": [c.to_dict() for c in result.causes],
        "residual": result.residual,
        "overhead": {"cycles_before": ov.cycles_before,
                     "cycles_after": ov.cycles_after,
                     "increase_percent": ov.increase_percent},
        "instructions_before": len(original),
        "instructions_after": len(result.final_program),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
