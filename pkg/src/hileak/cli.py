"""Command-line front end.

Subcommands mirror the pipeline stages: `emulate` produces trace files,
`analyze` scans them, `rootcause` attributes confirmed leaks, `fix` applies
barrier insertions, `run` drives the whole loop and `report` renders a run
summary.  Every subcommand is deterministic given its inputs and --seed.

Exit codes: 0 success / clean, 2 residual leakage after `run`, 1 errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .asm import AsmError, parse_program
from .combiner import multivariate_ttest
from .emulator import ExperimentSpec, run_experiment
from .leakmodel import LeakageModel, default_model
from .pipeline import DEFAULT_SCHEDULE, report as render_report, run_loop
from .rewriter import apply_fixes, overhead, plan_fixes
from .rootcause import RootCause, analyze_leak
from .combiner import CombinationIndex, LeakPoint
from .stats import DEFAULT_ALPHA
from .tracestore import (DatasetManifest, TraceFormatError, read_traceset,
                         write_traceset)

log = logging.getLogger("hileak")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_RESIDUAL = 2


def _threads_default() -> int:
    env = os.environ.get("HILEAK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _parse_schedule(text: str):
    if ":" in text:
        start, stop, step = (int(x) for x in text.split(":"))
        return list(range(start, stop + 1, step))
    return [int(x) for x in text.split(",") if x]


def _kernel_config(path: Path) -> dict:
    """Optional JSON sidecar next to the kernel (same stem, .json)."""
    side = path.with_suffix(".json")
    if side.exists():
        with open(side) as fh:
            return json.load(fh)
    return {}


def _load_kernel(args):
    path = Path(args.kernel)
    try:
        text = path.read_text()
    except OSError as e:
        raise SystemExit2(f"cannot read kernel {path}: {e}")
    try:
        program = parse_program(text)
    except AsmError as e:
        raise SystemExit2(f"kernel {path}: {e}")
    return program, _kernel_config(path)


def _load_model(args) -> LeakageModel:
    if getattr(args, "model", None):
        return LeakageModel.load(args.model)
    return default_model()


class SystemExit2(Exception):
    """Config / input error carrying a diagnostic."""


def _make_spec(program, cfg, args) -> ExperimentSpec:
    order = args.order if args.order is not None else cfg.get("order", 2)
    noise = (args.noise_sigma_pct if args.noise_sigma_pct is not None
             else cfg.get("noise_sigma_pct", 0.0025))
    kwargs = dict(kernel=program, order=order, seed=args.seed,
                  noise_sigma_pct=noise,
                  n_traces=getattr(args, "traces", 0) or 0)
    if cfg.get("share_addresses"):
        kwargs["share_addresses"] = cfg["share_addresses"]
        kwargs["reg_init"] = {k: int(v)
                              for k, v in cfg.get("reg_init", {}).items()}
    return ExperimentSpec(**kwargs)


def _window(args, cfg):
    if args.window is not None:
        return args.window
    return cfg.get("window")


def cmd_emulate(args) -> int:
    program, cfg = _load_kernel(args)
    model = _load_model(args)
    spec = _make_spec(program, cfg, args)
    if spec.n_traces < 2:
        raise SystemExit2("--traces must be >= 2")
    ts, _ = run_experiment(spec, model, record_components=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "traces.htr"
    write_traceset(ts, str(trace_path))
    manifest = DatasetManifest(
        kernel=str(args.kernel), order=spec.order,
        fixed_input=[spec.fixed_secret], n_traces=ts.n_traces,
        noise_sigma_pct=spec.noise_sigma_pct, seed=spec.seed,
        files={"traces": trace_path.name})
    manifest.save(str(out / "manifest.json"))
    print(f"wrote {ts.n_traces} traces x {ts.n_samples} samples to {trace_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        ts = read_traceset(args.traces, mmap=True)
    except (OSError, TraceFormatError) as e:
        raise SystemExit2(f"cannot read traces: {e}")
    res = multivariate_ttest(ts, order=args.order or 2, window=args.window,
                             alpha=args.alpha, splits=args.splits,
                             threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.heatmap.to_csv(str(out / "heatmap.csv"))
    if res.heatmap.order == 2:
        res.heatmap.to_pgm(str(out / "heatmap.pgm"), res.threshold)
    doc = {"threshold": res.threshold, "alpha": res.alpha,
           "n_comparisons": res.n_comparisons,
           "leaks": [{"points": list(lp.index.points), "t": lp.t_value,
                      "dof": lp.dof} for lp in res.leaks]}
    with open(out / "leaks.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"{len(res.leaks)} leak(s) at threshold {res.threshold:.2f}")
    return EXIT_OK


def cmd_rootcause(args) -> int:
    program, cfg = _load_kernel(args)
    model = _load_model(args)
    spec = _make_spec(program, cfg, args)
    if spec.n_traces < 2:
        raise SystemExit2("--traces must be >= 2")
    with open(args.leaks) as fh:
        leak_doc = json.load(fh)
    if not leak_doc.get("leaks"):
        raise SystemExit2("no leaks in input; nothing to attribute")
    threshold = float(leak_doc["threshold"])
    leaks = [LeakPoint(CombinationIndex(tuple(e["points"])), e["t"],
                       e.get("dof", float("inf")))
             for e in leak_doc["leaks"]]
    points = sorted({p for lk in leaks for p in lk.index.points})
    ts, cm = run_experiment(spec, model, component_points=points)
    _, cm_comp = run_experiment(spec, model, all_random=True,
                                component_points=points)
    causes = [analyze_leak(cm, ts.labels, lk, model.coefficients, cm_comp,
                           threshold=threshold, seed=args.seed)
              for lk in leaks]
    doc = [c.to_dict(model.component_names) for c in causes]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "causes.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    for c in causes:
        print(f"leak {tuple(c.leak.index.points)}: {c.method}, "
              f"{len(c.culprits)} culprit(s)")
    return EXIT_OK


def cmd_fix(args) -> int:
    program, _ = _load_kernel(args)
    model = _load_model(args)
    with open(args.causes) as fh:
        cause_doc = json.load(fh)
    causes = []
    for entry in cause_doc:
        lp = LeakPoint(CombinationIndex(tuple(entry["leak"])), entry["t"],
                       float("inf"))
        culprits = {(c["sample"], c["component"])
                    for c in entry["culprits"]}
        causes.append(RootCause(leak=lp, culprits=culprits,
                                method=entry["method"]))
    plan = plan_fixes(program, causes, model)
    fixed = apply_fixes(program, plan)
    Path(args.out).write_text(fixed.emit())
    ov = overhead(program, fixed)
    print(f"{len(plan)} action(s); cycles {ov.cycles_before} -> "
          f"{ov.cycles_after} (+{ov.increase_percent:.1f}%)")
    return EXIT_OK


def cmd_run(args) -> int:
    program, cfg = _load_kernel(args)
    model = _load_model(args)
    spec = _make_spec(program, cfg, args)
    schedule = (_parse_schedule(args.schedule) if args.schedule
                else list(DEFAULT_SCHEDULE))
    result = run_loop(spec, model, schedule=schedule,
                      window=_window(args, cfg), alpha=args.alpha,
                      splits=args.splits, threads=args.threads,
                      experiments=args.experiments)
    name = Path(args.kernel).stem
    summary = render_report(result, args.out, program, name)
    state = "clean" if summary["clean"] else "residual leakage"
    print(f"{name}: {state} after {len(result.records)} iteration(s); "
          f"report in {args.out}")
    return EXIT_OK if summary["clean"] else EXIT_RESIDUAL


def cmd_report(args) -> int:
    path = Path(args.out) / "summary.json"
    try:
        with open(path) as fh:
            summary = json.load(fh)
    except OSError as e:
        raise SystemExit2(f"cannot read {path}: {e}")
    print(f"kernel {summary['kernel']} (order {summary['order']}): "
          f"{'clean' if summary['clean'] else 'residual leakage'}")
    print(f"threshold {summary['threshold']:.2f}")
    print("iter  traces     found  fixed  actions")
    for it in summary["iterations"]:
        print(f"{it['index']:>4}  {it['n_traces']:>9}  {it['leaks_found']:>5}"
              f"  {it['leaks_fixed']:>5}  {', '.join(it['actions']) or '-'}")
    ov = summary["overhead"]
    print(f"cycles {ov['cycles_before']} -> {ov['cycles_after']} "
          f"(+{ov['increase_percent']:.1f}%)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hileak",
        description="higher-order power-leakage detection and elimination "
                    "for masked assembly kernels")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, kernel=True, traces_flag=False):
        if kernel:
            sp.add_argument("--kernel", required=True)
            sp.add_argument("--model", help="leakage-model JSON "
                            "(default: built-in model)")
        sp.add_argument("--order", type=int, choices=(2, 3), default=None)
        sp.add_argument("--window", type=int, default=None)
        sp.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--threads", type=int, default=_threads_default())
        sp.add_argument("--splits", type=int, default=4)
        sp.add_argument("--noise-sigma-pct", type=float, default=None)
        if traces_flag:
            sp.add_argument("--traces", type=int, default=0,
                            help="trace count")

    sp = sub.add_parser("emulate", help="generate fixed-vs-random traces")
    common(sp, traces_flag=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_emulate)

    sp = sub.add_parser("analyze", help="multivariate t-test on a trace file")
    common(sp, kernel=False)
    sp.add_argument("--traces", required=True, help="trace file path")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("rootcause", help="attribute confirmed leaks")
    common(sp, traces_flag=True)
    sp.add_argument("--leaks", required=True, help="leaks.json from analyze")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_rootcause)

    sp = sub.add_parser("fix", help="apply barrier fixes for root causes")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--model")
    sp.add_argument("--causes", required=True, help="causes.json")
    sp.add_argument("--out", required=True, help="fixed kernel path")
    sp.set_defaults(func=cmd_fix)

    sp = sub.add_parser("run", help="full detect/root-cause/fix loop")
    common(sp, traces_flag=False)
    sp.add_argument("--schedule",
                    help="trace counts: start:stop:step or comma list")
    sp.add_argument("--experiments", type=int, default=50)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="print a run summary")
    sp.add_argument("--out", required=True, help="run output directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, json.JSONDecodeError, TraceFormatError,
            AsmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
