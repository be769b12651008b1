import numpy as np
import pytest

from questkv.criticality import SelectionConfig, score_pages, select_top_k
from questkv.kv_store import CacheConfig, KvCache
from questkv.policies import PolicyKind, eviction_is_permanent, make_policy, policy_step


def run(policy, keys, queries, page_size=16):
    cache = KvCache(CacheConfig(head_dim=len(keys[0]), page_size=page_size))
    selections = []
    for t, (k, q) in enumerate(zip(keys, queries)):
        cache.append(k, k)
        selections.append(policy_step(policy, np.asarray(q, dtype=float), cache, t).tolist())
    return cache, selections


def test_full_selects_everything():
    _, sel = run(make_policy("full"), [[float(i)] for i in range(10)], [[1.0]] * 10)
    assert sel[-1] == list(range(10))


def test_streaming_sinks_and_window():
    pol = make_policy("streaming", 5, sink_count=2, window_count=3)
    _, sel = run(pol, [[0.0]] * 10, [[1.0]] * 10)
    assert sel[-1] == [0, 1, 7, 8, 9]
    assert sel[2] == [0, 1, 2]


def test_tova_drops_lowest_current_weight():
    # probe logits at step 2 are (1, -1, 2): token 1 has the smallest weight
    pol = make_policy("tova", 2)
    _, sel = run(pol, [[1.0], [-1.0], [2.0]], [[1.0], [1.0], [1.0]])
    assert sel == [[0], [0, 1], [0, 2]]


def test_h2o_evicts_lowest_accumulated_outside_recent():
    # equal logits: accumulated sums after step 2 are 11/6, 5/6, 1/3; token 2
    # is protected by the recent window, so token 1 goes.
    pol = make_policy("h2o", 2, recent_window=1)
    _, sel = run(pol, [[0.0]] * 3, [[1.0]] * 3)
    assert sel[-1] == [0, 2]
    np.testing.assert_allclose(pol.accumulated_scores[[0, 2]], [11 / 6, 1 / 3])
    assert pol.accumulated_scores[1] == 0.0


def test_h2o_prefers_heavy_hitters():
    # token 0 aligns with every query, so it should survive a long run
    rng = np.random.default_rng(3)
    keys = rng.standard_normal((200, 8)) * 0.1
    keys[0] = 5.0
    pol = make_policy("h2o", 32, page_size=16)
    _, sel = run(pol, keys, np.ones((200, 8)))
    assert 0 in sel[-1]


def test_quest_selects_pages():
    rng = np.random.default_rng(0)
    keys = rng.standard_normal((100, 4))
    pol = make_policy("quest", 32, page_size=16)
    cache, sel = run(pol, keys, rng.standard_normal((100, 4)), page_size=16)
    q = rng.standard_normal(4)
    chosen = policy_step(pol, q, cache, 99)
    pages = select_top_k(score_pages(q, cache), SelectionConfig(32), cache)
    assert chosen.tolist() == cache.page_tokens(pages).tolist()
    assert len(chosen) <= 32


def test_permanent_eviction_flags():
    assert eviction_is_permanent(PolicyKind.QUEST) is False
    assert eviction_is_permanent("h2o") is True
    assert eviction_is_permanent("tova") is True
    assert eviction_is_permanent("streaming") is True
    assert eviction_is_permanent(PolicyKind.FULL) is False
    with pytest.raises(ValueError):
        eviction_is_permanent("fastgen")


def test_unknown_kind_and_bad_params():
    with pytest.raises(ValueError):
        make_policy("sparq", 32)
    with pytest.raises(ValueError):
        make_policy("h2o", None)
    with pytest.raises(ValueError):
        make_policy("quest", 8, page_size=16)
    with pytest.raises(ValueError):
        make_policy("streaming", 4, sink_count=2, window_count=3)


def test_new_token_must_be_newest():
    cache = KvCache(CacheConfig(head_dim=1, page_size=4))
    cache.append([1.0], [1.0])
    cache.append([1.0], [1.0])
    with pytest.raises(ValueError):
        policy_step(make_policy("tova", 4), np.ones(1), cache, 0)


@pytest.mark.parametrize("kind", ["h2o", "tova", "streaming", "quest", "full"])
@pytest.mark.parametrize("budget", [16, 48])
def test_budget_and_permanence(kind, budget):
    rng = np.random.default_rng([budget, *map(ord, kind)])
    S = 16
    pol = make_policy(kind, budget if kind != "full" else None, page_size=S)
    keys = rng.standard_normal((300, 8))
    cache, sel = run(pol, keys, rng.standard_normal((300, 8)), page_size=S)
    gone: set[int] = set()
    previous: set[int] = set()
    for t, chosen in enumerate(sel):
        chosen_set = set(chosen)
        assert chosen == sorted(chosen_set)
        assert all(0 <= i <= t for i in chosen)
        if kind == "full":
            assert chosen == list(range(t + 1))
            continue
        assert len(chosen) <= budget
        if eviction_is_permanent(kind):
            assert not (chosen_set & gone)
            gone |= previous - chosen_set
        previous = chosen_set
    if kind == "quest":
        assert not pol.retained and not len(pol.accumulated_scores)


def test_streaming_is_pure_function_of_counts():
    a = make_policy("streaming", 12, sink_count=4)
    b = make_policy("streaming", 12, sink_count=4)
    _, sa = run(a, np.zeros((40, 2)), np.ones((40, 2)))
    _, sb = run(b, np.ones((40, 2)), -np.ones((40, 2)))
    assert sa == sb
