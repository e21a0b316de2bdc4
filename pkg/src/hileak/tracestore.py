"""Persistent storage and streaming access for trace sets and component matrices.

File formats (little endian throughout):

  Trace file:      magic "HLTR", u32 version=1, u64 n_traces, u64 n_samples,
                   one label byte per trace (0=FIXED, 1=RANDOM), then f32
                   samples in row-major (trace-major) order.
  Component file:  magic "HLCM", u32 version=1, u64 n_traces, u64 n_samples,
                   u32 n_components, name table (u16 length + utf-8 bytes per
                   name), then f32 values in sample-major order: for each
                   sample point j, n_components contiguous runs of n_traces
                   values.  Sample-major layout keeps per-point reduced-model
                   reconstruction sequential.
  Manifest:        JSON sidecar describing the experiment configuration.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import FIXED, RANDOM

TRACE_MAGIC = b"HLTR"
COMPONENT_MAGIC = b"HLCM"
FORMAT_VERSION = 1


class TraceFormatError(Exception):
    """Raised when a trace or component file is malformed."""


@dataclass
class TraceSet:
    """Power samples for a fixed-vs-random experiment.

    samples is float32 with shape (n_traces, n_samples); labels holds one
    class tag per trace.  Accumulation on top of this data is always done in
    float64 (see stats module); 32-bit storage halves the disk footprint.
    """

    samples: np.ndarray
    labels: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2D (n_traces, n_samples) matrix")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("labels must have one entry per trace")

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def fixed(self) -> np.ndarray:
        return self.samples[self.labels == FIXED]

    def random(self) -> np.ndarray:
        return self.samples[self.labels == RANDOM]

    def require_both_classes(self):
        if not ((self.labels == FIXED).any() and (self.labels == RANDOM).any()):
            raise ValueError("trace set needs at least one FIXED and one RANDOM trace")


@dataclass
class ComponentMatrix:
    """Per-(trace, sample, component) leakage-model term values.

    Stored sample-major: values has shape (n_samples, n_components, n_traces)
    so that all data for one sample point is contiguous.  values may be a
    memmap for large on-disk matrices; point() always returns an in-memory
    float64 view suitable for reduced-model reconstruction.

    sample_indices, when set, marks a sparse recording: values row k holds
    the components of original sample point sample_indices[k], and point()
    accepts the original indices.
    """

    values: np.ndarray
    component_names: list[str]
    sample_indices: list | None = None

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError("values must have shape (n_samples, n_components, n_traces)")
        if self.values.shape[1] != len(self.component_names):
            raise ValueError("component_names length must match n_components")
        if self.sample_indices is not None:
            if len(self.sample_indices) != self.values.shape[0]:
                raise ValueError("sample_indices length must match values rows")
            self._row_of = {int(j): k for k, j in enumerate(self.sample_indices)}
        else:
            self._row_of = None

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    @property
    def n_traces(self) -> int:
        return self.values.shape[2]

    def point(self, j: int) -> np.ndarray:
        """Component values at sample point j, shape (n_components, n_traces)."""
        if self._row_of is not None:
            j = self._row_of[int(j)]
        return np.asarray(self.values[j], dtype=np.float64)

    def reconstruct_power(self, coefficients: np.ndarray) -> np.ndarray:
        """Coefficient-weighted sum over components, shape (n_traces, n_samples)."""
        coeff = np.asarray(coefficients, dtype=np.float64)
        out = np.empty((self.n_traces, self.n_samples), dtype=np.float64)
        for j in range(self.n_samples):
            out[:, j] = coeff @ self.point(j)
        return out


@dataclass
class DatasetManifest:
    """Experiment configuration recorded next to the binary files."""

    kernel: str = ""
    order: int = 2
    fixed_input: list[int] = field(default_factory=list)
    mask_width: int = 32
    n_traces: int = 0
    noise_sigma_pct: float = 0.0
    seed: int = 0
    files: dict = field(default_factory=dict)

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        with open(path) as fh:
            return cls(**json.load(fh))

    def validate(self, base_dir: str = "."):
        for name, rel in self.files.items():
            full = os.path.join(base_dir, rel)
            if not os.path.exists(full):
                raise TraceFormatError(f"manifest references missing file {rel!r} ({name})")


_TRACE_HEADER = struct.Struct("<4sIQQ")


def write_traceset(ts: TraceSet, path: str):
    """Write a trace file; a JSON sidecar carries the generation seed."""
    with open(path, "wb") as fh:
        fh.write(_TRACE_HEADER.pack(TRACE_MAGIC, FORMAT_VERSION, ts.n_traces, ts.n_samples))
        fh.write(ts.labels.astype(np.uint8).tobytes())
        fh.write(np.ascontiguousarray(ts.samples, dtype="<f4").tobytes())
    with open(path + ".json", "w") as fh:
        json.dump({"seed": int(ts.seed)}, fh)


def _read_trace_header(fh, path):
    raw = fh.read(_TRACE_HEADER.size)
    if len(raw) != _TRACE_HEADER.size:
        raise TraceFormatError(f"{path}: truncated header")
    magic, version, n_traces, n_samples = _TRACE_HEADER.unpack(raw)
    if magic != TRACE_MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"{path}: unsupported version {version}")
    return n_traces, n_samples


def read_traceset(path: str, mmap: bool = False) -> TraceSet:
    with open(path, "rb") as fh:
        n_traces, n_samples = _read_trace_header(fh, path)
        labels = np.frombuffer(fh.read(n_traces), dtype=np.uint8)
        if labels.size != n_traces:
            raise TraceFormatError(f"{path}: truncated label block")
        data_offset = fh.tell()
    if mmap:
        samples = np.memmap(path, dtype="<f4", mode="r", offset=data_offset,
                            shape=(n_traces, n_samples))
    else:
        samples = np.fromfile(path, dtype="<f4", offset=data_offset)
        if samples.size != n_traces * n_samples:
            raise TraceFormatError(f"{path}: sample block size mismatch")
        samples = samples.reshape(n_traces, n_samples)
    seed = 0
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            seed = json.load(fh).get("seed", 0)
    return TraceSet(samples=np.asarray(samples), labels=labels.copy(), seed=seed)


def stream_columns(path: str, start: int, stop: int, block: int = 64):
    """Yield (col_start, block_array) over sample columns [start, stop).

    block_array has shape (n_traces, width) float32.  Backed by a memmap, so
    resident memory is bounded by n_traces * block, independent of n_samples.
    Concurrent iterators over non-overlapping ranges are safe (read-only).
    """
    with open(path, "rb") as fh:
        n_traces, n_samples = _read_trace_header(fh, path)
        fh.seek(n_traces, os.SEEK_CUR)
        data_offset = fh.tell()
    if not (0 <= start <= stop <= n_samples):
        raise IndexError(f"column range [{start}, {stop}) outside [0, {n_samples})")
    mm = np.memmap(path, dtype="<f4", mode="r", offset=data_offset,
                   shape=(n_traces, n_samples))
    for lo in range(start, stop, block):
        hi = min(lo + block, stop)
        yield lo, np.array(mm[:, lo:hi])


def write_components(cm: ComponentMatrix, path: str):
    with open(path, "wb") as fh:
        fh.write(COMPONENT_MAGIC)
        fh.write(struct.pack("<IQQI", FORMAT_VERSION, cm.n_traces, cm.n_samples,
                             cm.n_components))
        for name in cm.component_names:
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
        np.ascontiguousarray(cm.values, dtype="<f4").tofile(fh)


def read_components(path: str, mmap: bool = True) -> ComponentMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != COMPONENT_MAGIC:
            raise TraceFormatError(f"{path}: bad magic {magic!r}")
        version, n_traces, n_samples, n_components = struct.unpack("<IQQI", fh.read(24))
        if version != FORMAT_VERSION:
            raise TraceFormatError(f"{path}: unsupported version {version}")
        names = []
        for _ in range(n_components):
            (length,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(length).decode("utf-8"))
        data_offset = fh.tell()
    shape = (n_samples, n_components, n_traces)
    if mmap:
        values = np.memmap(path, dtype="<f4", mode="r", offset=data_offset, shape=shape)
    else:
        values = np.fromfile(path, dtype="<f4", offset=data_offset)
        if values.size != n_samples * n_components * n_traces:
            raise TraceFormatError(f"{path}: value block size mismatch")
        values = values.reshape(shape)
    return ComponentMatrix(values=values, component_names=names)
