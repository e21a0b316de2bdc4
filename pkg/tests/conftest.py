"""Shared fixtures and reference oracles for the test suite."""

import numpy as np
import pytest

from hileak import FIXED, RANDOM
from hileak.asm import parse_program
from hileak.leakmodel import default_model
from hileak.stats import Moments, welch_t
from hileak.tracestore import TraceSet

from importlib import resources

KERNELS = resources.files("hileak").joinpath("kernels")


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def toy2():
    return parse_program(KERNELS.joinpath("toy2.s").read_text())


@pytest.fixture(scope="session")
def toy2_fixed():
    return parse_program(KERNELS.joinpath("toy2_fixed.s").read_text())


@pytest.fixture(scope="session")
def toy3():
    return parse_program(KERNELS.joinpath("toy3.s").read_text())


def kernel_path(name: str) -> str:
    return str(KERNELS.joinpath(name))


def homogeneous_traceset(rng, n_traces, n_samples) -> TraceSet:
    """Fixed and random traces drawn from one distribution (null model)."""
    samples = rng.normal(0.0, 1.0, (n_traces, n_samples)).astype(np.float32)
    labels = (np.arange(n_traces) % 2).astype(np.uint8)
    return TraceSet(samples=samples, labels=labels)


def welch_two_pass(a, b):
    """Textbook two-pass Welch oracle; returns (t, dof)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    se2 = va / a.size + vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    dof = se2 ** 2 / ((va / a.size) ** 2 / (a.size - 1)
                      + (vb / b.size) ** 2 / (b.size - 1))
    return t, dof


def brute_force_ttest(ts: TraceSet, points) -> float:
    """Materialize the mean-centered product trace, then t-test it."""
    f = ts.samples[ts.labels == FIXED].astype(np.float64)
    r = ts.samples[ts.labels == RANDOM].astype(np.float64)
    zf = np.ones(f.shape[0])
    zr = np.ones(r.shape[0])
    for j in points:
        zf = zf * (f[:, j] - f[:, j].mean())
        zr = zr * (r[:, j] - r[:, j].mean())
    return welch_t(Moments.from_samples(zf), Moments.from_samples(zr)).t
