"""Synthetic instruction-level power model.

Power at each executed instruction is a linear combination of 28 named
components, each a pure function of the execution record: Hamming weights of
current operand/result/bus values, Hamming distances against the previous
instruction's pipeline and memory-bus shadow state, and per-instruction-class
intercepts.  Coefficients live in an editable JSON model file; the default
model is a documented stand-in, not a profile of real silicon.

Address values deliberately feed no component: address-bus leakage is out of
scope for this tool, though the extractor interface permits adding it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

# component kinds drive the rewrite-rule mapping
KIND_VALUE = "value"          # current-instruction data values; no barrier fixes
KIND_PIPELINE = "pipeline"    # transition against pipeline shadow state
KIND_MEMORY = "memory"        # transition against / decay of the memory bus
KIND_STATIC = "static"        # instruction-class intercepts

INSTRUCTION_CLASSES = (
    "load", "store", "push", "pop", "mov", "shift", "alu_logic", "alu_arith",
)


def hamming_weight(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.uint32))


@dataclass
class StepContext:
    """Values visible to component extractors for one executed instruction.

    Arrays are vectorized over traces.  has_* flags gate components so that
    absent operands contribute zero rather than a stale-register artifact.
    """

    iclass: str
    op1: np.ndarray
    op2: np.ndarray
    result: np.ndarray
    bus: np.ndarray
    has_op1: bool
    has_op2: bool
    has_bus: bool
    prev_op1: np.ndarray
    prev_op2: np.ndarray
    prev_result: np.ndarray
    prev_bus: np.ndarray


def _field(ctx: StepContext, name: str) -> tuple[np.ndarray, bool]:
    if name == "op1":
        return ctx.op1, ctx.has_op1
    if name == "op2":
        return ctx.op2, ctx.has_op2
    if name == "result":
        return ctx.result, True
    if name == "bus":
        return ctx.bus, ctx.has_bus
    if name == "prev_op1":
        return ctx.prev_op1, True
    if name == "prev_op2":
        return ctx.prev_op2, True
    if name == "prev_result":
        return ctx.prev_result, True
    if name == "prev_bus":
        return ctx.prev_bus, True
    raise KeyError(f"unknown context field {name!r}")


def _x_hw(ctx, params, zeros):
    val, present = _field(ctx, params["of"])
    return hamming_weight(val) if present else zeros


def _x_hd(ctx, params, zeros):
    a, pa = _field(ctx, params["of"])
    b, pb = _field(ctx, params["vs"])
    if not (pa and pb):
        return zeros
    return hamming_weight(a ^ b)


def _x_hw_pair(ctx, params, zeros):
    if not (ctx.has_op1 and ctx.has_op2):
        return zeros
    op = params["op"]
    if op == "and":
        return hamming_weight(ctx.op1 & ctx.op2)
    if op == "or":
        return hamming_weight(ctx.op1 | ctx.op2)
    if op == "xor":
        return hamming_weight(ctx.op1 ^ ctx.op2)
    raise KeyError(f"unknown pair op {op!r}")


def _x_intercept(ctx, params, zeros):
    if ctx.iclass == params["class"]:
        return zeros + 1.0
    return zeros


EXTRACTORS = {
    "hw": _x_hw,
    "hd": _x_hd,
    "hw_pair": _x_hw_pair,
    "class_intercept": _x_intercept,
}


@dataclass
class Component:
    name: str
    extractor: str
    params: dict
    kind: str


@dataclass
class LeakageModel:
    components: list[Component]
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if len(self.components) != self.coefficients.size:
            raise ValueError("one coefficient per component required")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def component_names(self) -> list[str]:
        return [c.name for c in self.components]

    def kinds(self) -> list[str]:
        return [c.kind for c in self.components]

    def extract(self, ctx: StepContext, n: int) -> np.ndarray:
        """Component matrix for one instruction, shape (n_components, n)."""
        zeros = np.zeros(n)
        out = np.empty((self.n_components, n), dtype=np.float64)
        for k, comp in enumerate(self.components):
            out[k] = EXTRACTORS[comp.extractor](ctx, comp.params, zeros)
        return out

    def scaled(self, factor: float) -> "LeakageModel":
        return LeakageModel(self.components, self.coefficients * factor)

    def save(self, path: str):
        doc = {
            "components": [{"name": c.name, "extractor": c.extractor,
                            "params": c.params, "kind": c.kind}
                           for c in self.components],
            "coefficients": self.coefficients.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "LeakageModel":
        comps = [Component(c["name"], c["extractor"], c.get("params", {}),
                           c.get("kind", KIND_VALUE))
                 for c in doc["components"]]
        return cls(comps, np.asarray(doc["coefficients"], dtype=np.float64))

    @classmethod
    def load(cls, path: str) -> "LeakageModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_model() -> LeakageModel:
    """The shipped 28-component model."""
    text = resources.files("hileak").joinpath("data/default_model.json").read_text()
    return LeakageModel.from_dict(json.loads(text))
