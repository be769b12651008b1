"""Query-aware page criticality: min/max upper-bound scoring and Top-K page selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from questkv._ops import channel_sum
from questkv.counters import ByteCounter
from questkv.kv_store import KvCache, PageMetadata


@dataclass(frozen=True)
class PageScore:
    page_index: int
    score: float


@dataclass(frozen=True)
class SelectionConfig:
    """How many pages to attend per query.

    ``per_layer_enabled=False`` turns selection off for a layer that should
    run dense attention; the caller decides which layers those are.
    """

    token_budget: int
    force_include_recent: bool = True
    per_layer_enabled: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.token_budget, bool) or self.token_budget < 1:
            raise ValueError(f"token_budget must be positive, got {self.token_budget!r}")

    def pages_for(self, page_size: int) -> int:
        """Number of pages K that fit in the token budget."""
        return self.token_budget // page_size


def page_upper_bounds(query: np.ndarray, min_keys: np.ndarray, max_keys: np.ndarray) -> np.ndarray:
    """Vectorised score for many pages: sum over channels of max(q*max, q*min)."""
    q = np.asarray(query, dtype=np.float64)
    bound = np.maximum(q * max_keys, q * min_keys)
    return channel_sum(bound)


def estimate_page_score(query, metadata: PageMetadata) -> float:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != metadata.min_key.shape:
        raise ValueError(
            f"query has shape {q.shape}, metadata has {metadata.min_key.shape}"
        )
    return float(
        page_upper_bounds(q, metadata.min_key[None, :], metadata.max_key[None, :])[0]
    )


def score_pages(query, cache: KvCache, counter: ByteCounter | None = None) -> np.ndarray:
    """Criticality of every page as a float array, in page order."""
    if cache.token_count == 0:
        raise ValueError("cannot score an empty cache")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (cache.config.head_dim,):
        raise ValueError(f"query has shape {q.shape}, expected ({cache.config.head_dim},)")
    scores = page_upper_bounds(q, cache.min_keys, cache.max_keys)
    if counter is not None:
        counter.record_metadata(
            cache.num_pages, cache.config.page_size, cache.config.vector_bytes
        )
    return scores


def estimate_all(query, cache: KvCache, counter: ByteCounter | None = None) -> list[PageScore]:
    scores = score_pages(query, cache, counter)
    return [PageScore(i, float(s)) for i, s in enumerate(scores)]


def top_k_indices(scores: np.ndarray, k: int, force_last: bool = False) -> np.ndarray:
    """Ascending indices of the ``k`` largest scores; ties go to the lower index.

    With ``force_last`` the final index always takes one of the ``k`` slots.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if force_last:
        rest = top_k_indices(scores[:-1], k - 1)
        return np.append(rest, n - 1).astype(np.int64)
    # lexsort sorts by the last key first: descending score, then ascending index.
    order = np.lexsort((np.arange(n), -scores))
    return np.sort(order[:k]).astype(np.int64)


def select_top_k(scores, config: SelectionConfig, cache: KvCache) -> list[int]:
    """Pick the pages to attend for one query.

    ``scores`` may be a list of :class:`PageScore` or a plain array in page order.
    """
    page_size = cache.config.page_size
    num_pages = cache.num_pages
    if not config.per_layer_enabled:
        return list(range(num_pages))
    if config.token_budget < page_size:
        raise ValueError(
            f"token_budget {config.token_budget} is smaller than page_size {page_size}"
        )
    if len(scores) and isinstance(scores[0], PageScore):
        arr = np.empty(num_pages, dtype=np.float64)
        if len(scores) != num_pages:
            raise ValueError(f"got {len(scores)} scores for {num_pages} pages")
        for s in scores:
            arr[s.page_index] = s.score
    else:
        arr = np.asarray(scores, dtype=np.float64)
        if len(arr) != num_pages:
            raise ValueError(f"got {len(arr)} scores for {num_pages} pages")
    k = config.pages_for(page_size)
    return top_k_indices(arr, k, force_last=config.force_include_recent).tolist()


def select_tokens(query, cache: KvCache, config: SelectionConfig,
                  counter: ByteCounter | None = None) -> np.ndarray:
    """Score pages, pick the Top-K and expand them to ascending token indices."""
    if not config.per_layer_enabled:
        return np.arange(cache.token_count, dtype=np.int64)
    scores = score_pages(query, cache, counter)
    pages = select_top_k(scores, config, cache)
    return cache.page_tokens(pages)
