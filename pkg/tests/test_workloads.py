import struct

import numpy as np
import pytest

from questkv.criticality import SelectionConfig, score_pages, select_top_k
from questkv.kv_store import CacheConfig, KvCache
from questkv.workloads import (
    DecodeTrace,
    NeedleSpec,
    TraceFormatError,
    TraceTruncatedError,
    gen_gaussian_trace,
    gen_needle_trace,
    read_trace,
    write_trace,
    write_trace_metadata_csv,
)


def test_gaussian_is_deterministic():
    a = gen_gaussian_trace(7, 300, 16)
    b = gen_gaussian_trace(7, 300, 16)
    assert a == b
    assert a.keys.dtype == np.float32 and a.keys.shape == (300, 16)


def test_seeds_differ():
    assert gen_gaussian_trace(1, 50, 8) != gen_gaussian_trace(2, 50, 8)


def test_length_one():
    t = gen_gaussian_trace(0, 1, 4)
    assert len(t) == 1 and len(list(t.steps)) == 1


def test_prefix_independent_of_head_dim_blocks():
    # Keys come first in the stream, so the key block is a prefix of the draw.
    short, long = gen_gaussian_trace(3, 10, 8), gen_gaussian_trace(3, 20, 8)
    assert np.array_equal(short.keys, long.keys[:10])


def test_scale():
    t = gen_gaussian_trace(0, 4000, 64)
    norms = np.linalg.norm(t.keys.astype(np.float64), axis=1)
    assert abs(norms.mean() - 1.0) < 0.02


def test_invalid_sizes():
    with pytest.raises(ValueError):
        gen_gaussian_trace(0, 0, 4)
    with pytest.raises(ValueError):
        gen_gaussian_trace(0, 4, 0)


def _needle_page_rank(trace, page_size=16, budget=256):
    cache = KvCache(CacheConfig(trace.head_dim, page_size))
    cache.extend(trace.keys, trace.values)
    q = trace.queries[-1].astype(np.float64)
    return select_top_k(score_pages(q, cache), SelectionConfig(budget), cache)


@pytest.mark.parametrize("seed", range(5))
def test_needle_dominates(seed):
    pos = 37 + 150 * seed
    t = gen_needle_trace(seed, 1024, 64, NeedleSpec(pos))
    logits = t.keys.astype(np.float64) @ t.queries[-1].astype(np.float64)
    assert int(np.argmax(logits)) == pos
    assert t.metadata["margin_sigmas"] >= 5
    assert pos // 16 in _needle_page_rank(t)


def test_needle_in_last_page():
    t = gen_needle_trace(1, 1000, 32, NeedleSpec(999))
    pages = _needle_page_rank(t)
    assert 999 // 16 in pages


def test_needle_alignment_zero_is_gaussian():
    assert gen_needle_trace(5, 100, 8, NeedleSpec(3, alignment=0)) == gen_gaussian_trace(5, 100, 8)


def test_needle_bad_position():
    with pytest.raises(ValueError):
        gen_needle_trace(0, 10, 4, NeedleSpec(10))


def test_round_trip(tmp_path):
    t = gen_needle_trace(4, 200, 16, NeedleSpec(50))
    path = tmp_path / "t.qkvt"
    write_trace(path, t)
    back = read_trace(path)
    assert back == t
    assert path.stat().st_size == 13 + 200 * 3 * 16 * 4


def test_header_layout(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(0, 3, 2))
    raw = path.read_bytes()
    assert struct.unpack_from("<4sBII", raw) == (b"QKVT", 1, 2, 3)


def test_truncated(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(0, 10, 4))
    raw = path.read_bytes()
    for cut in (5, 13, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(TraceTruncatedError):
            read_trace(path)


def test_wrong_magic(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(0, 2, 4))
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(TraceFormatError, match="magic"):
        read_trace(path)


def test_wrong_version(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(0, 2, 4))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="version"):
        read_trace(path)


def test_dimension_mismatch(tmp_path):
    path = tmp_path / "t.qkvt"
    write_trace(path, gen_gaussian_trace(0, 4, 4))
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 5, 3)  # claim head_dim 3, payload written for 4
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="dimension"):
        read_trace(path)


def test_trace_shape_validation():
    z = np.zeros((3, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        DecodeTrace(5, z, z, z)
    with pytest.raises(ValueError):
        DecodeTrace(4, z, z, np.zeros((2, 4), dtype=np.float32))


def test_metadata_csv(tmp_path):
    t = gen_needle_trace(0, 64, 8, NeedleSpec(10))
    path = tmp_path / "meta.csv"
    write_trace_metadata_csv(path, t)
    lines = path.read_text().splitlines()
    assert lines[0] == "key,value"
    assert "needle_position,10" in lines
