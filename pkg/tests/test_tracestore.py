"""Round-trip, streaming and manifest behavior of the trace store."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hileak.tracestore import (ComponentMatrix, DatasetManifest, TraceFormatError,
                               TraceSet, read_components, read_traceset,
                               stream_columns, write_components, write_traceset)


def _ts(rng, n, m, seed=0):
    samples = rng.normal(size=(n, m)).astype(np.float32)
    labels = (np.arange(n) % 2).astype(np.uint8)
    return TraceSet(samples=samples, labels=labels, seed=seed)


def test_roundtrip_zeros(tmp_path):
    ts = TraceSet(samples=np.zeros((2, 3), dtype=np.float32),
                  labels=np.array([0, 1], dtype=np.uint8))
    path = str(tmp_path / "z.htr")
    write_traceset(ts, path)
    back = read_traceset(path)
    assert back.n_traces == 2 and back.n_samples == 3
    assert np.array_equal(back.samples, ts.samples)
    assert np.array_equal(back.labels, ts.labels)


def test_roundtrip_random_bitexact(tmp_path):
    rng = np.random.default_rng(1)
    ts = _ts(rng, 1000, 100, seed=42)
    path = str(tmp_path / "r.htr")
    write_traceset(ts, path)
    back = read_traceset(path)
    assert back.samples.tobytes() == ts.samples.tobytes()
    assert back.seed == 42


def test_roundtrip_mmap(tmp_path):
    rng = np.random.default_rng(2)
    ts = _ts(rng, 200, 17)
    path = str(tmp_path / "m.htr")
    write_traceset(ts, path)
    back = read_traceset(path, mmap=True)
    assert np.array_equal(np.asarray(back.samples), ts.samples)


def test_corrupt_magic(tmp_path):
    path = tmp_path / "bad.htr"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(TraceFormatError, match="magic"):
        read_traceset(str(path))


def test_truncated_file(tmp_path):
    rng = np.random.default_rng(3)
    ts = _ts(rng, 50, 10)
    path = str(tmp_path / "t.htr")
    write_traceset(ts, path)
    data = open(path, "rb").read()
    open(path, "wb").write(data[:len(data) // 2])
    with pytest.raises(TraceFormatError):
        read_traceset(path)


def test_stream_columns_single(tmp_path):
    ts = TraceSet(samples=np.arange(6, dtype=np.float32).reshape(2, 3),
                  labels=np.array([0, 1], dtype=np.uint8))
    path = str(tmp_path / "s.htr")
    write_traceset(ts, path)
    blocks = list(stream_columns(path, 0, 1))
    assert len(blocks) == 1
    lo, arr = blocks[0]
    assert lo == 0 and arr.shape == (2, 1)
    assert np.array_equal(arr[:, 0], ts.samples[:, 0])


def test_stream_columns_concat_equals_matrix(tmp_path):
    rng = np.random.default_rng(4)
    ts = _ts(rng, 300, 37)
    path = str(tmp_path / "c.htr")
    write_traceset(ts, path)
    parts = [arr for _, arr in stream_columns(path, 0, 37, block=8)]
    assert np.array_equal(np.concatenate(parts, axis=1), ts.samples)


def test_stream_columns_empty_and_out_of_range(tmp_path):
    rng = np.random.default_rng(5)
    ts = _ts(rng, 10, 5)
    path = str(tmp_path / "e.htr")
    write_traceset(ts, path)
    assert list(stream_columns(path, 2, 2)) == []
    with pytest.raises(IndexError):
        list(stream_columns(path, 0, 6))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 40), m=st.integers(1, 30), seed=st.integers(0, 2**31))
def test_streamed_columns_match_memory(tmp_path_factory, n, m, seed):
    rng = np.random.default_rng(seed)
    ts = _ts(rng, n, m)
    path = str(tmp_path_factory.mktemp("hy") / "p.htr")
    write_traceset(ts, path)
    assert np.array_equal(
        np.concatenate([a for _, a in stream_columns(path, 0, m, block=7)], axis=1),
        ts.samples)
    assert np.array_equal(np.asarray(read_traceset(path).samples), ts.samples)


def test_component_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    values = rng.normal(size=(5, 4, 100)).astype(np.float32)
    cm = ComponentMatrix(values=values, component_names=list("abcd"))
    path = str(tmp_path / "c.hcm")
    write_components(cm, path)
    back = read_components(path, mmap=False)
    assert back.component_names == list("abcd")
    assert np.array_equal(back.values, values)
    assert np.array_equal(back.point(2), values[2].astype(np.float64))


def test_component_sparse_index_mapping():
    values = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    cm = ComponentMatrix(values=values, component_names=list("xyz"),
                         sample_indices=[9, 22])
    assert np.array_equal(cm.point(22), values[1])
    with pytest.raises(KeyError):
        cm.point(0)


def test_reconstruct_power_matches_manual():
    rng = np.random.default_rng(7)
    values = rng.normal(size=(3, 5, 50)).astype(np.float32)
    cm = ComponentMatrix(values=values, component_names=list("abcde"))
    coeff = rng.normal(size=5)
    power = cm.reconstruct_power(coeff)
    for j in range(3):
        expect = coeff @ values[j].astype(np.float64)
        assert np.allclose(power[:, j], expect, rtol=1e-12)


def test_manifest_roundtrip_and_validation(tmp_path):
    rng = np.random.default_rng(8)
    ts = _ts(rng, 20, 4)
    write_traceset(ts, str(tmp_path / "d.htr"))
    man = DatasetManifest(kernel="k.s", order=2, n_traces=20, seed=3,
                          files={"traces": "d.htr"})
    man.save(str(tmp_path / "manifest.json"))
    back = DatasetManifest.load(str(tmp_path / "manifest.json"))
    assert back == man
    back.validate(str(tmp_path))
    back.files["traces"] = "missing.htr"
    with pytest.raises(TraceFormatError):
        back.validate(str(tmp_path))


def test_traceset_invariants():
    with pytest.raises(ValueError):
        TraceSet(samples=np.zeros(3, dtype=np.float32),
                 labels=np.zeros(3, dtype=np.uint8))
    with pytest.raises(ValueError):
        TraceSet(samples=np.zeros((2, 3), dtype=np.float32),
                 labels=np.zeros(3, dtype=np.uint8))
    one_class = TraceSet(samples=np.zeros((2, 3), dtype=np.float32),
                         labels=np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError):
        one_class.require_both_classes()
