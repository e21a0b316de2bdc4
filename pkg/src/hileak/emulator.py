"""Vectorized interpreter for the supported assembly subset.

One sample point is emitted per executed instruction.  The machine state is
vectorized over traces: each register holds an array of per-trace words, so a
whole fixed-vs-random experiment executes the program once.  Register r7 is
reserved for the rewriter's barriers and is initialised with a fresh random
word per trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import FIXED, RANDOM
from .asm import Program, Instruction, SP
from .leakmodel import LeakageModel, StepContext
from .tracestore import TraceSet, ComponentMatrix

U32 = np.uint32
WORD_MASK = np.uint32(0xFFFFFFFF)

CLASS_OF = {
    "ldr": "load", "ldrb": "load",
    "str": "store", "strb": "store",
    "push": "push", "pop": "pop",
    "mov": "mov", "movs": "mov",
    "lsls": "shift", "lsrs": "shift",
    "eors": "alu_logic", "ands": "alu_logic", "orrs": "alu_logic",
    "bics": "alu_logic", "mvns": "alu_logic",
    "adds": "alu_arith", "subs": "alu_arith",
}


class EmulationError(Exception):
    pass


@dataclass
class MachineState:
    """Flat byte-addressable memory plus registers, vectorized over traces."""

    n_traces: int
    mem_size: int = 4096
    regs: np.ndarray = None            # (14, n) uint32; index 13 is sp
    memory: np.ndarray = None          # (n, mem_size) uint8
    sp_init: int = 0x0800
    # pipeline / memory shadow state, updated after every instruction
    prev_op1: np.ndarray = None
    prev_op2: np.ndarray = None
    prev_result: np.ndarray = None
    prev_bus: np.ndarray = None

    def __post_init__(self):
        n = self.n_traces
        if self.regs is None:
            self.regs = np.zeros((14, n), dtype=U32)
            self.regs[SP] = self.sp_init
        if self.memory is None:
            self.memory = np.zeros((n, self.mem_size), dtype=np.uint8)
        for name in ("prev_op1", "prev_op2", "prev_result", "prev_bus"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=U32))

    def set_reg(self, r: int, value):
        self.regs[r] = np.asarray(value, dtype=U32)

    def store_word(self, addr: np.ndarray, value: np.ndarray):
        self._check(addr, 4)
        for b in range(4):
            self.memory[np.arange(self.n_traces), addr + b] = (value >> U32(8 * b)).astype(np.uint8)

    def load_word(self, addr: np.ndarray) -> np.ndarray:
        self._check(addr, 4)
        rows = np.arange(self.n_traces)
        out = np.zeros(self.n_traces, dtype=U32)
        for b in range(4):
            out |= self.memory[rows, addr + b].astype(U32) << U32(8 * b)
        return out

    def store_byte(self, addr: np.ndarray, value: np.ndarray):
        self._check(addr, 1)
        self.memory[np.arange(self.n_traces), addr] = value.astype(np.uint8)

    def load_byte(self, addr: np.ndarray) -> np.ndarray:
        self._check(addr, 1)
        return self.memory[np.arange(self.n_traces), addr].astype(U32)

    def _check(self, addr: np.ndarray, size: int):
        if addr.size and (int(addr.max()) + size > self.mem_size or int(addr.min()) < 0):
            raise EmulationError(f"memory access out of bounds (size {self.mem_size})")


@dataclass
class ExecutionRecord:
    power: np.ndarray                       # (n_traces, n_samples) float64
    components: ComponentMatrix | None
    final_state: MachineState


def _step(ins: Instruction, st: MachineState):
    """Execute one instruction; returns (op1, op2, result, bus, flags)."""
    n = st.n_traces
    regs = st.regs
    mnem = ins.mnemonic
    none = np.zeros(n, dtype=U32)

    if mnem in ("ldr", "ldrb"):
        addr = (regs[ins.rn] + U32(ins.imm)).astype(np.int64)
        val = st.load_word(addr) if mnem == "ldr" else st.load_byte(addr)
        regs[ins.rd] = val
        return none, none, val, val, (False, False, True)
    if mnem in ("str", "strb"):
        addr = (regs[ins.rn] + U32(ins.imm)).astype(np.int64)
        val = regs[ins.rd].copy()
        if mnem == "str":
            st.store_word(addr, val)
        else:
            st.store_byte(addr, val & U32(0xFF))
            val = val & U32(0xFF)
        return val, none, val, val, (True, False, True)
    if mnem == "push":
        val = none
        for r in ins.reglist:
            regs[SP] = regs[SP] - U32(4)
            val = regs[r].copy()
            st.store_word(regs[SP].astype(np.int64), val)
        return regs[ins.reglist[0]].copy(), none, val, val, (True, False, True)
    if mnem == "pop":
        val = none
        for r in reversed(ins.reglist):
            if int((regs[SP]).min()) >= st.sp_init:
                raise EmulationError("stack underflow on pop")
            val = st.load_word(regs[SP].astype(np.int64))
            regs[r] = val
            regs[SP] = regs[SP] + U32(4)
        return none, none, val, val, (False, False, True)
    if mnem in ("mov", "movs"):
        src = np.full(n, ins.imm, dtype=U32) if ins.rm is None else regs[ins.rm].copy()
        regs[ins.rd] = src
        return src, none, src.copy(), none, (True, False, False)
    if mnem in ("lsls", "lsrs"):
        a = regs[ins.rm].copy()
        sh = np.full(n, ins.imm, dtype=U32) if ins.imm is not None else regs[ins.rm] & U32(0xFF)
        if ins.imm is None:
            a = regs[ins.rn].copy()
            sh = regs[ins.rm] & U32(0xFF)
        big = sh >= U32(32)
        sh = np.where(big, U32(0), sh)
        res = (a << sh) if mnem == "lsls" else (a >> sh)
        res = np.where(big, U32(0), res).astype(U32)
        regs[ins.rd] = res
        return a, sh.astype(U32), res, none, (True, True, False)
    if mnem == "mvns":
        a = regs[ins.rm].copy()
        res = (~a).astype(U32)
        regs[ins.rd] = res
        return a, none, res, none, (True, False, False)

    # two-source ALU ops
    a = regs[ins.rn].copy()
    b = np.full(n, ins.imm, dtype=U32) if ins.rm is None else regs[ins.rm].copy()
    if mnem == "adds":
        res = (a + b).astype(U32)
    elif mnem == "subs":
        res = (a - b).astype(U32)
    elif mnem == "eors":
        res = a ^ b
    elif mnem == "ands":
        res = a & b
    elif mnem == "orrs":
        res = a | b
    elif mnem == "bics":
        res = a & ~b
    else:
        raise EmulationError(f"unhandled mnemonic {mnem}")
    regs[ins.rd] = res
    return a, b, res, none, (True, True, False)


def execute(program: Program, state: MachineState, model: LeakageModel,
            record_components: bool = True,
            component_points: list | None = None) -> ExecutionRecord:
    """Run a straight-line program, emitting one power sample per instruction.

    Pure given (program, state, model): same inputs give bit-identical
    records.  Component values are float32 in sample-major layout; power is
    accumulated in float64.  component_points restricts recording to the
    given sample indices (the matrix then carries the index mapping).
    """
    n = state.n_traces
    m = len(program)
    power = np.empty((n, m), dtype=np.float64)
    comp_store = None
    wanted = None
    if record_components:
        if component_points is not None:
            wanted = sorted({int(j) for j in component_points})
            comp_store = np.empty((len(wanted), model.n_components, n),
                                  dtype=np.float32)
        else:
            comp_store = np.empty((m, model.n_components, n), dtype=np.float32)

    for j, ins in enumerate(program.instructions):
        op1, op2, result, bus, (has1, has2, hasb) = _step(ins, state)
        ctx = StepContext(
            iclass=CLASS_OF[ins.mnemonic],
            op1=op1, op2=op2, result=result, bus=bus,
            has_op1=has1, has_op2=has2, has_bus=hasb,
            prev_op1=state.prev_op1, prev_op2=state.prev_op2,
            prev_result=state.prev_result, prev_bus=state.prev_bus,
        )
        comps = model.extract(ctx, n)
        if record_components:
            if wanted is None:
                comp_store[j] = comps.astype(np.float32)
            elif j in wanted:
                comp_store[wanted.index(j)] = comps.astype(np.float32)
        power[:, j] = model.coefficients @ comps
        # shadow rotation: operand pipeline registers keep stale contents
        # when an instruction has no such operand; the bus register only
        # changes on memory traffic
        if has1:
            state.prev_op1 = op1
        if has2:
            state.prev_op2 = op2
        state.prev_result = result
        if hasb:
            state.prev_bus = bus

    cm = None
    if record_components:
        cm = ComponentMatrix(values=comp_store, component_names=model.component_names,
                             sample_indices=wanted)
    return ExecutionRecord(power=power, components=cm, final_state=state)


# counter-based RNG: any trace's inputs are reproducible in isolation from
# (seed, trace index, stream) without replaying predecessors
_PHI = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def counter_words(seed: int, trace_idx, stream: int) -> np.ndarray:
    """Deterministic 32-bit words keyed by (seed, trace index, stream)."""
    idx = np.asarray(trace_idx, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (idx + np.uint64(1)) * _PHI
        z ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _M1
        z += np.uint64(stream + 1) * _M2
        for _ in range(2):
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        z ^= z >> np.uint64(31)
    return (z & np.uint64(0xFFFFFFFF)).astype(U32)


@dataclass
class ExperimentSpec:
    """Fixed-vs-random experiment configuration for a masked kernel.

    The secret is split into order+1 Boolean shares: share0 xor share1 xor
    ... equals the secret, with fresh uniform masks per trace in both
    classes.  share_addresses gives the memory location of each share word;
    reg_init presets address registers.
    """

    kernel: Program
    order: int = 2
    fixed_secret: int = 0
    n_traces: int = 20_000
    noise_sigma_pct: float = 0.0025
    seed: int = 1
    share_addresses: list[int] = field(default_factory=list)
    reg_init: dict = field(default_factory=dict)
    mem_size: int = 4096
    sp_init: int = 0x0800

    def __post_init__(self):
        if not self.share_addresses:
            self.share_addresses = [0x100 + 4 * i for i in range(self.order + 1)]
            if not self.reg_init:
                self.reg_init = {f"r{i + 1}": addr
                                 for i, addr in enumerate(self.share_addresses)}
        if len(self.share_addresses) != self.order + 1:
            raise ValueError("need order + 1 share addresses")


def generate_shares(spec: ExperimentSpec, n_traces: int | None = None):
    """Per-trace (labels, shares, secrets).  shares has shape (d+1, n)."""
    n = n_traces if n_traces is not None else spec.n_traces
    idx = np.arange(n, dtype=np.uint64)
    labels = (idx % 2 == 1).astype(np.uint8)  # even FIXED, odd RANDOM
    d = spec.order
    secrets = counter_words(spec.seed, idx, stream=0)
    secrets = np.where(labels == FIXED, U32(spec.fixed_secret & 0xFFFFFFFF), secrets)
    shares = np.empty((d + 1, n), dtype=U32)
    acc = secrets.copy()
    for k in range(1, d + 1):
        mask = counter_words(spec.seed, idx, stream=k)
        shares[k] = mask
        acc ^= mask
    shares[0] = acc
    return labels, shares, secrets


def initial_state(spec: ExperimentSpec, labels: np.ndarray,
                  shares: np.ndarray) -> MachineState:
    n = labels.size
    st = MachineState(n_traces=n, mem_size=spec.mem_size, sp_init=spec.sp_init)
    from .asm import REG_NAMES
    for name, value in spec.reg_init.items():
        st.set_reg(REG_NAMES[name.lower()], np.full(n, value, dtype=U32))
    # r7 holds a fresh random word per trace (reserved barrier register)
    idx = np.arange(n, dtype=np.uint64)
    st.set_reg(7, counter_words(spec.seed, idx, stream=spec.order + 1))
    # whatever ran before the kernel left unknown data in the pipeline and
    # on the memory bus; model that as independent random words per trace
    st.prev_op1 = counter_words(spec.seed, idx, stream=spec.order + 2)
    st.prev_op2 = counter_words(spec.seed, idx, stream=spec.order + 3)
    st.prev_result = counter_words(spec.seed, idx, stream=spec.order + 4)
    st.prev_bus = counter_words(spec.seed, idx, stream=spec.order + 5)
    for k, addr in enumerate(spec.share_addresses):
        st.store_word(np.full(n, addr, dtype=np.int64), shares[k])
    return st


def run_experiment(spec: ExperimentSpec, model: LeakageModel,
                   record_components: bool = True, all_random: bool = False,
                   n_traces: int | None = None,
                   component_points: list | None = None):
    """Emulate the kernel under a fixed-vs-random input schedule.

    Returns (TraceSet, ComponentMatrix | None).  With all_random=True every
    trace draws a random secret (the TOST companion run).  Noise per
    spec.noise_sigma_pct is applied to the trace set only; the component
    matrix stays noise-free so weighted components reproduce the clean
    power exactly.
    """
    labels, shares, _ = generate_shares(spec, n_traces)
    if all_random:
        # rebuild share0 from per-trace random secrets for every trace
        idx = np.arange(labels.size, dtype=np.uint64)
        secrets = counter_words(spec.seed ^ 0xA11A, idx, stream=0)
        shares = shares.copy()
        shares[0] ^= np.where(labels == FIXED,
                              secrets ^ U32(spec.fixed_secret & 0xFFFFFFFF),
                              U32(0))
    st = initial_state(spec, labels, shares)
    try:
        rec = execute(spec.kernel, st, model, record_components=record_components,
                      component_points=component_points)
    except EmulationError as e:
        raise EmulationError(f"emulation aborted: {e}") from e
    ts = TraceSet(samples=rec.power.astype(np.float32), labels=labels, seed=spec.seed)
    if spec.noise_sigma_pct > 0:
        ts = add_noise(ts, spec.noise_sigma_pct, seed=spec.seed ^ 0x6E6F6973)
    return ts, rec.components


def add_noise(ts: TraceSet, sigma_percent: float, seed: int) -> TraceSet:
    """Zero-mean Gaussian noise with sigma = sigma_percent * (max - min)."""
    if sigma_percent < 0:
        raise ValueError("sigma_percent must be >= 0")
    if sigma_percent == 0:
        return ts
    amplitude = float(ts.samples.max()) - float(ts.samples.min())
    sigma = sigma_percent * amplitude
    rng = np.random.default_rng(seed)
    noisy = ts.samples.astype(np.float64) + rng.normal(0.0, sigma, ts.samples.shape)
    return TraceSet(samples=noisy.astype(np.float32), labels=ts.labels, seed=ts.seed)


def snr(ts: TraceSet, target_values) -> np.ndarray:
    """Per-sample SNR against a per-trace intermediate value.

    Variance of the per-group means over mean within-group variance, where
    groups are the distinct target values.  Deterministic leakage (zero
    within-group variance) yields inf.
    """
    targets = np.asarray(target_values)
    if targets.shape != (ts.n_traces,):
        raise ValueError("need one target value per trace")
    samples = ts.samples.astype(np.float64)
    values, inverse, counts = np.unique(targets, return_inverse=True, return_counts=True)
    if counts.min() < 2:
        raise ValueError("fewer than 2 traces in some target group")
    k = values.size
    means = np.zeros((k, ts.n_samples))
    within = np.zeros((k, ts.n_samples))
    for g in range(k):
        grp = samples[inverse == g]
        means[g] = grp.mean(axis=0)
        within[g] = grp.var(axis=0, ddof=1)
    between = means.var(axis=0, ddof=1)
    mean_within = within.mean(axis=0)
    with np.errstate(divide="ignore"):
        return np.where(mean_within == 0.0, np.inf, between / mean_within)
