"""Self-check suites run by ``questkv verify``.

Each suite builds its own random instances from a fixed seed and returns a
:class:`SuiteResult`. ``fault=True`` corrupts one page's max-key entry after
construction so the detectors can be shown to fire.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from questkv.attention import full_attention, sparse_attention
from questkv.counters import ByteCounter
from questkv.criticality import SelectionConfig, score_pages, select_top_k
from questkv.kv_store import CacheConfig, KvCache, scan_metadata
from questkv.metrics import counted_bytes, traffic_fraction

HEAD_DIMS = (16, 64, 128)
PAGE_SIZES = (8, 16, 32)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    failures: int
    seconds: float
    detail: str = ""


def naive_attention(query, keys, values) -> np.ndarray:
    """Attention in extended precision, no max-subtraction, no shared helpers."""
    q = np.asarray(query, dtype=np.longdouble)
    k = np.asarray(keys, dtype=np.longdouble)
    v = np.asarray(values, dtype=np.longdouble)
    e = np.exp((k @ q) / np.sqrt(np.longdouble(len(q))))
    return ((e @ v) / e.sum()).astype(np.float64)


def _random_cache(rng: np.random.Generator, length: int, head_dim: int,
                  page_size: int) -> KvCache:
    cache = KvCache(CacheConfig(head_dim=head_dim, page_size=page_size))
    cache.extend(rng.standard_normal((length, head_dim)),
                 rng.standard_normal((length, head_dim)))
    return cache


def _inject(cache: KvCache) -> None:
    # Collapse page 0's bounds onto its first key, then push one max entry
    # below it: breaks scan equality always and the bound for multi-token pages.
    cache._min[0] = cache._keys[0]
    cache._max[0] = cache._keys[0]
    cache._max[0, 0] -= 1.0


def _timed(name, fn, *args, **kwargs) -> SuiteResult:
    t0 = time.perf_counter()
    checked, failures, detail = fn(*args, **kwargs)
    return SuiteResult(name, failures == 0, checked, failures,
                       time.perf_counter() - t0, detail)


def _upper_bound(pairs: int, seed: int, fault: bool):
    rng = np.random.default_rng(seed)
    checked = failures = 0
    combos = [(d, s) for d in HEAD_DIMS for s in PAGE_SIZES]
    per_combo = -(-pairs // len(combos))
    for d, s in combos:
        pages = max(1, min(per_combo, 512))
        cache = _random_cache(rng, pages * s, d, s)
        if fault:
            _inject(cache)
        queries = -(-per_combo // pages)
        keys = cache.keys.reshape(pages, s, d)
        for _ in range(queries):
            q = rng.standard_normal(d)
            scores = score_pages(q, cache)
            exact = (keys @ q).max(axis=1)
            tol = 1e-6 * (1.0 + np.abs(scores))
            failures += int((scores + tol < exact).sum())
            checked += pages
    return checked, failures, f"{checked} (page, query) pairs"


def _metadata_scan(sequences: int, seed: int, fault: bool):
    rng = np.random.default_rng(seed)
    checked = failures = 0
    for i in range(sequences):
        d = int(rng.integers(1, 9))
        s = int(rng.integers(1, 9))
        cache = KvCache(CacheConfig(head_dim=d, page_size=s))
        for _ in range(int(rng.integers(1, 40))):
            cache.append(rng.standard_normal(d), rng.standard_normal(d))
        if fault and i == 0:
            _inject(cache)
        for p in range(cache.num_pages):
            start, stop = cache.page_bounds(p)
            ref = scan_metadata(cache.keys[start:stop])
            meta = cache.page_metadata(p)
            checked += 1
            if not (np.array_equal(meta.min_key, ref.min_key)
                    and np.array_equal(meta.max_key, ref.max_key)):
                failures += 1
    return checked, failures, f"{sequences} random append sequences"


def _full_budget(instances: int, seed: int, max_len: int):
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(instances):
        d = int(rng.choice(HEAD_DIMS))
        s = int(rng.choice(PAGE_SIZES))
        cache = _random_cache(rng, int(rng.integers(1, max_len + 1)), d, s)
        q = rng.standard_normal(d)
        dense = full_attention(q, cache).output
        sparse = sparse_attention(q, cache, range(cache.num_pages)).output
        if dense.tobytes() != sparse.tobytes():
            failures += 1
    return instances, failures, "bit-exact sparse(all pages) vs dense"


def _oracle(instances: int, seed: int, max_len: int, rtol: float = 1e-5):
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, 129))
        cache = _random_cache(rng, int(rng.integers(1, max_len + 1)), d, 16)
        q = rng.standard_normal(d)
        got = full_attention(q, cache).output
        ref = naive_attention(q, cache.keys, cache.values)
        err = np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)
        worst = max(worst, float(err))
        failures += int(err > rtol)
    return instances, failures, f"worst relative L2 {worst:.3g}"


def _traffic(head_dim: int = 128):
    failures = 0
    frac = traffic_fraction(16, 65536, 4096)
    failures += int(frac != 0.125)
    rng = np.random.default_rng(0)
    cache = KvCache(CacheConfig(head_dim=head_dim, page_size=16, bytes_per_element=2))
    cache.extend(rng.standard_normal((65536, head_dim)), rng.standard_normal((65536, head_dim)))
    q = rng.standard_normal(head_dim)
    counter = ByteCounter(mode="quest", token_budget=4096)
    cfg = SelectionConfig(4096)
    pages = select_top_k(score_pages(q, cache, counter), cfg, cache)
    sparse_attention(q, cache, pages, counter)
    report = counted_bytes(counter)
    failures += int(abs(report.counted_fraction - frac) > report.slack)
    return 2, failures, (f"model {frac} counted {report.counted_fraction:.6f} "
                         f"(slack {report.slack:.6f})")


SUITES = ("upper_bound", "metadata_scan", "full_budget", "oracle", "traffic")


def run_suites(names=SUITES, seed: int = 0, scale: float = 1.0,
               fault: bool = False) -> list[SuiteResult]:
    """Run the named suites. ``scale`` multiplies the default instance counts."""
    results = []
    for name in names:
        if name == "upper_bound":
            r = _timed(name, _upper_bound, int(20000 * scale), seed, fault)
        elif name == "metadata_scan":
            r = _timed(name, _metadata_scan, int(500 * scale), seed, fault)
        elif name == "full_budget":
            r = _timed(name, _full_budget, int(50 * scale), seed, 4096)
        elif name == "oracle":
            r = _timed(name, _oracle, int(50 * scale), seed, 4096)
        elif name == "traffic":
            r = _timed(name, _traffic)
        else:
            raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
        results.append(r)
    return results

