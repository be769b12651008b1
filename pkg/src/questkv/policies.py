"""Token-selection policies compared in the recall experiments.

Quest keeps the whole cache and chooses pages per query. H2O, TOVA and
StreamingLLM are eviction policies: once a token leaves their retained set it
is gone for good. All baselines here are single-head, token-granular
re-implementations of the published selection rules, not the original
systems.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from questkv.attention import attention_logits, softmax_weights
from questkv.criticality import SelectionConfig, select_tokens
from questkv.kv_store import KvCache


class PolicyKind(str, enum.Enum):
    FULL = "full"
    QUEST = "quest"
    H2O = "h2o"
    TOVA = "tova"
    STREAMING = "streaming"


def eviction_is_permanent(kind: PolicyKind | str) -> bool:
    kind = PolicyKind(kind)
    return kind in (PolicyKind.H2O, PolicyKind.TOVA, PolicyKind.STREAMING)


@dataclass
class PolicyState:
    """Mutable per-trace state of one policy.

    ``retained`` is kept sorted. ``accumulated_scores`` is indexed by token and
    holds the H2O running attention sums (zero once a token is evicted); it stays
    empty for other kinds.
    """

    kind: PolicyKind
    budget: int | None = None
    page_size: int = 16
    force_include_recent: bool = True
    sink_count: int = 4
    window_count: int | None = None
    recent_window: int | None = None
    retained: list[int] = field(default_factory=list)
    accumulated_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    steps: int = 0

    def __post_init__(self) -> None:
        self.kind = PolicyKind(self.kind)
        if self.kind is PolicyKind.FULL:
            return
        if self.budget is None or self.budget < 1:
            raise ValueError(f"{self.kind.value} needs a positive budget")
        if self.kind is PolicyKind.STREAMING:
            if self.window_count is None:
                self.window_count = self.budget - self.sink_count
            if self.sink_count < 0 or self.window_count < 0:
                raise ValueError("sink_count and window_count must be non-negative")
            if self.sink_count + self.window_count > self.budget:
                raise ValueError("sink_count + window_count exceeds the budget")
        if self.kind is PolicyKind.H2O:
            if self.recent_window is None:
                self.recent_window = self.page_size
            # At least one slot must stay evictable.
            self.recent_window = min(self.recent_window, self.budget - 1)
        if self.kind is PolicyKind.QUEST and self.budget < self.page_size:
            raise ValueError(
                f"quest budget {self.budget} is smaller than page_size {self.page_size}"
            )

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.budget, force_include_recent=self.force_include_recent)


def make_policy(kind: PolicyKind | str, budget: int | None = None, **params) -> PolicyState:
    return PolicyState(kind=PolicyKind(kind), budget=budget, **params)


def _streaming_tokens(sink: int, window: int, n: int) -> np.ndarray:
    head = np.arange(min(sink, n))
    tail = np.arange(max(sink, n - window), n)
    return np.concatenate([head, tail]).astype(np.int64)


def policy_step(state: PolicyState, query, cache: KvCache, new_token_index: int,
                logits: np.ndarray | None = None) -> np.ndarray:
    """Advance one decode step and return the ascending token indices attended.

    ``logits`` may carry this step's scaled logits over the whole cache so
    H2O and TOVA can slice them instead of recomputing; values are identical.
    """
    n = cache.token_count
    if new_token_index != n - 1:
        raise ValueError(
            f"new_token_index {new_token_index} is not the newest token ({n - 1})"
        )
    state.steps += 1
    kind = state.kind

    if kind is PolicyKind.FULL:
        return np.arange(n, dtype=np.int64)

    if kind is PolicyKind.QUEST:
        return select_tokens(query, cache, state.selection)

    if kind is PolicyKind.STREAMING:
        selected = _streaming_tokens(state.sink_count, state.window_count, n)
        state.retained = selected.tolist()
        return selected

    state.retained.append(new_token_index)
    retained = np.asarray(state.retained, dtype=np.int64)

    def retained_weights() -> np.ndarray:
        if logits is not None:
            return softmax_weights(logits[retained])
        return softmax_weights(attention_logits(query, cache, retained))

    if kind is PolicyKind.H2O:
        weights = retained_weights()
        acc = state.accumulated_scores
        if len(acc) < n:
            grown = np.zeros(max(n, 2 * len(acc)), dtype=np.float64)
            grown[: len(acc)] = acc
            acc = state.accumulated_scores = grown
        acc[retained] += weights
        if len(retained) > state.budget:
            evictable = retained[retained < n - state.recent_window]
            # argmin keeps the first (oldest) token on ties.
            victim = int(evictable[np.argmin(acc[evictable])])
            state.retained.remove(victim)
            acc[victim] = 0.0
        return np.asarray(state.retained, dtype=np.int64)

    if kind is PolicyKind.TOVA:
        if len(retained) > state.budget:
            victim = int(np.argmin(retained_weights()))
            del state.retained[victim]
        return np.asarray(state.retained, dtype=np.int64)

    raise ValueError(f"unknown policy kind {kind!r}")
