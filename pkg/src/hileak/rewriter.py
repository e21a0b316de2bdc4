"""Translate root causes into barrier insertions and account their cost.

Two rewrite rules exist, both using the reserved scratch register r7:
a pipeline flush (`mov r7, r7`) overwrites the pipeline shadow registers,
and a memory wipe (`push {r7}` / `pop {r7}`) puts a secret-independent word
on the memory bus.  Components whose kind names neither transition class
(pure data-value leakage, class intercepts) have no barrier rule and are
reported instead of fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .asm import Instruction, Program
from .leakmodel import KIND_MEMORY, KIND_PIPELINE, LeakageModel
from .rootcause import RootCause, UNRESOLVED

log = logging.getLogger(__name__)

PIPELINE_FLUSH = "PIPELINE_FLUSH"
MEMORY_WIPE = "MEMORY_WIPE"

#: component kind -> rewrite rule; value/static kinds deliberately absent
RULE_FOR_KIND = {
    KIND_PIPELINE: PIPELINE_FLUSH,
    KIND_MEMORY: MEMORY_WIPE,
}

#: per-instruction cycle costs (Cortex-M0-like): memory traffic costs 2
#: cycles per word moved, everything else single-cycle
CYCLE_COST = {
    "ldr": 2, "ldrb": 2, "str": 2, "strb": 2, "push": 2, "pop": 2,
}


@dataclass(frozen=True)
class RewriteAction:
    kind: str                     # PIPELINE_FLUSH | MEMORY_WIPE
    position: int                 # insert before this instruction index
    cause: RootCause

    def instructions(self) -> list:
        comment = (f"hileak fix: {self.kind.lower()} for leak "
                   f"({', '.join(str(p) for p in self.cause.leak.index.points)})")
        if self.kind == PIPELINE_FLUSH:
            return [Instruction("mov", rd=7, rm=7, comment=comment)]
        return [Instruction("push", reglist=(7,), comment=comment),
                Instruction("pop", reglist=(7,))]


def _barrier_present(program: Program, position: int, kind: str) -> bool:
    """Is an equivalent barrier already sitting directly before position?

    Looks back across any existing barrier block so that re-planning on an
    already-fixed program stays idempotent.
    """
    ins = program.instructions
    flush_key = Instruction("mov", rd=7, rm=7).key()
    push_key = Instruction("push", reglist=(7,)).key()
    pop_key = Instruction("pop", reglist=(7,)).key()
    p = position
    seen = set()
    while p >= 1:
        key = ins[p - 1].key()
        if key == flush_key:
            seen.add(PIPELINE_FLUSH)
            p -= 1
        elif p >= 2 and key == pop_key and ins[p - 2].key() == push_key:
            seen.add(MEMORY_WIPE)
            p -= 2
        else:
            break
    return kind in seen


def plan_fixes(program: Program, causes, model: LeakageModel) -> list:
    """Map culprit components to barrier insertions.

    Sample index equals instruction index.  Each culprit pair proposes the
    rule for its component's kind at its own sample point; duplicates at one
    position collapse, flushes sort before wipes, and positions already
    carrying the barrier are skipped.  Culprits with no rule (data-value or
    static components) and UNRESOLVED causes are logged and skipped.
    """
    proposed = {}    # (position, rule) -> cause
    for cause in causes:
        if cause.method == UNRESOLVED:
            log.warning("unresolved root cause for leak %s: no fix planned",
                        cause.leak.index.points)
            continue
        for s, t in sorted(cause.culprits):
            comp = model.components[t]
            rule = RULE_FOR_KIND.get(comp.kind)
            if rule is None:
                log.warning("no rewrite rule for %s-kind component %r at %d",
                            comp.kind, comp.name, s)
                continue
            if not 0 <= s < len(program):
                raise ValueError(f"culprit position {s} outside program")
            proposed.setdefault((s, rule), cause)

    plan = []
    for (position, rule), cause in proposed.items():
        if _barrier_present(program, position, rule):
            continue
        plan.append(RewriteAction(kind=rule, position=position, cause=cause))
    # one stable order: by position, flush before wipe
    plan.sort(key=lambda a: (a.position, a.kind != PIPELINE_FLUSH))
    return plan


def apply_fixes(program: Program, plan) -> Program:
    """Insert the planned barriers, back to front so positions stay valid."""
    for action in plan:
        if not 0 <= action.position <= len(program):
            raise ValueError(f"stale plan: position {action.position} outside "
                             f"program of length {len(program)}")
    out = list(program.instructions)
    for action in sorted(plan, key=lambda a: (-a.position, a.kind == PIPELINE_FLUSH)):
        out[action.position:action.position] = action.instructions()
    return Program(instructions=out, source=program.source)


@dataclass
class OverheadReport:
    cycles_before: int
    cycles_after: int

    @property
    def increase_percent(self) -> float:
        if self.cycles_before == 0:
            return 0.0
        return 100.0 * (self.cycles_after - self.cycles_before) / self.cycles_before

    def row(self, name: str) -> str:
        return (f"{name}\t{self.cycles_before}\t{self.cycles_after}"
                f"\t{self.increase_percent:.1f}%")


def cycle_count(program: Program) -> int:
    total = 0
    for ins in program.instructions:
        cost = CYCLE_COST.get(ins.mnemonic, 1)
        if ins.mnemonic in ("push", "pop"):
            cost *= len(ins.reglist)
        total += cost
    return total


def overhead(before: Program, after: Program) -> OverheadReport:
    """Cycle counts before/after fixing plus the percentage increase."""
    return OverheadReport(cycle_count(before), cycle_count(after))


def overhead_table(rows) -> str:
    """Corpus overhead table: (kernel, OverheadReport) pairs as aligned text."""
    lines = ["kernel\tunprotected (cycles)\tprotected (cycles)\tincrease"]
    for name, rep in rows:
        lines.append(rep.row(name))
    return "\n".join(lines) + "\n"
