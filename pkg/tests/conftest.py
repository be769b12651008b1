import numpy as np
import pytest

from questkv.kv_store import CacheConfig, KvCache

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_cache(keys, values=None, page_size=16):
    keys = np.asarray(keys, dtype=np.float64)
    if values is None:
        values = np.zeros_like(keys)
    cache = KvCache(CacheConfig(head_dim=keys.shape[1], page_size=page_size))
    for k, v in zip(keys, np.asarray(values, dtype=np.float64)):
        cache.append(k, v)
    return cache


@pytest.fixture()
def acceptance_record():
    def record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS.append((name, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
