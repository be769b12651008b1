"""Reference decode-step attention, dense and restricted to selected pages.

Dense and sparse attention share one code path over an explicit ascending
token index array, so attending every page reproduces dense attention bit for
bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from questkv._ops import ordered_sum, token_sum
from questkv.counters import ByteCounter
from questkv.kv_store import KvCache


@dataclass(frozen=True)
class AttentionOutput:
    output: np.ndarray
    weights_sum_check: float


def _token_index(cache: KvCache, token_subset) -> np.ndarray:
    if token_subset is None or (isinstance(token_subset, str) and token_subset == "all"):
        return np.arange(cache.token_count, dtype=np.int64)
    idx = np.asarray(token_subset, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("token_subset must be one-dimensional")
    if len(idx) and (idx.min() < 0 or idx.max() >= cache.token_count):
        raise IndexError(f"token index out of range for {cache.token_count} tokens")
    idx = np.sort(idx)
    if len(idx) > 1 and (np.diff(idx) == 0).any():
        raise ValueError("token_subset contains duplicates")
    return idx


def _logits(query: np.ndarray, cache: KvCache, idx: np.ndarray, scaled: bool = True) -> np.ndarray:
    # Channel-major product reduced over its outer axis: ascending channel
    # order per token, the same order channel_sum uses for page scores.
    kt = cache.keys_by_channel
    if len(idx) != cache.token_count:
        kt = kt[:, idx]
    dots = ordered_sum(kt * query[:, None])
    return dots / math.sqrt(len(query)) if scaled else dots


def _check_query(query, cache: KvCache) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (cache.config.head_dim,):
        raise ValueError(f"query has shape {q.shape}, expected ({cache.config.head_dim},)")
    return q


def attention_logits(query, cache: KvCache, token_subset="all", scaled: bool = True) -> np.ndarray:
    """Logits ``q.k / sqrt(head_dim)`` for the subset, ascending token order.

    ``scaled=False`` returns the raw dot products, summed in the same channel
    order as page scores.
    """
    q = _check_query(query, cache)
    idx = _token_index(cache, token_subset)
    return _logits(q, cache, idx, scaled)


def softmax_weights(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("softmax needs a non-empty 1-D vector")
    e = np.exp(x - x.max())
    return e / e.sum()


def attend_tokens(query, cache: KvCache, tokens, counter: ByteCounter | None = None) -> AttentionOutput:
    """Softmax attention over an arbitrary token set, renormalised over that set."""
    q = _check_query(query, cache)
    idx = _token_index(cache, tokens)
    if len(idx) == 0:
        raise ValueError("cannot attend over an empty token set")
    weights = softmax_weights(_logits(q, cache, idx))
    values = cache.values if len(idx) == cache.token_count else cache.values[idx]
    out = token_sum(weights[:, None] * values)
    if counter is not None:
        counter.record_attention(
            len(idx), cache.token_count, cache.config.page_size, cache.config.vector_bytes
        )
    return AttentionOutput(output=out, weights_sum_check=float(weights.sum()))


def full_attention(query, cache: KvCache, counter: ByteCounter | None = None) -> AttentionOutput:
    if cache.token_count == 0:
        raise ValueError("cannot attend over an empty cache")
    if counter is not None:
        counter.mode = "dense"
        counter.token_budget = cache.token_count
    return attend_tokens(query, cache, "all", counter)


def sparse_attention(query, cache: KvCache, selected_pages,
                     counter: ByteCounter | None = None) -> AttentionOutput:
    pages = np.asarray(list(selected_pages), dtype=np.int64)
    if len(pages) == 0:
        raise ValueError("selected_pages is empty")
    if len(np.unique(pages)) != len(pages):
        raise ValueError("selected_pages contains duplicates")
    tokens = cache.page_tokens(pages)
    return attend_tokens(query, cache, tokens, counter)

