"""Append-only paged key/value storage with per-page min/max key metadata."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_INITIAL_CAPACITY = 64


@dataclass(frozen=True)
class CacheConfig:
    """Shape of a single-head cache.

    ``bytes_per_element`` only feeds traffic accounting; storage is float64.
    """

    head_dim: int
    page_size: int
    bytes_per_element: int = 2

    def __post_init__(self) -> None:
        for name in ("head_dim", "page_size", "bytes_per_element"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def vector_bytes(self) -> int:
        """Bytes of one key (or one value) vector."""
        return self.head_dim * self.bytes_per_element


@dataclass(frozen=True)
class PageMetadata:
    min_key: np.ndarray
    max_key: np.ndarray


@dataclass(frozen=True)
class Page:
    """Read-only view of one page. Arrays are copies; mutating them does nothing."""

    keys: np.ndarray
    values: np.ndarray
    metadata: PageMetadata
    capacity: int

    def __len__(self) -> int:
        return len(self.keys)


class KvCache:
    """Token-ordered KV storage for one attention head.

    Token ``t`` lives in page ``t // page_size``. Keys and values are held in
    growable row-per-token arrays, with a channel-major copy of the keys so
    logits can be reduced over channels without a transpose per query. Page
    metadata lives in two ``(pages, head_dim)`` arrays updated on every append.
    """

    def __init__(self, config: CacheConfig):
        self.config = config
        d = config.head_dim
        self._keys = np.empty((_INITIAL_CAPACITY, d), dtype=np.float64)
        self._values = np.empty((_INITIAL_CAPACITY, d), dtype=np.float64)
        self._keys_t = np.empty((d, _INITIAL_CAPACITY), dtype=np.float64)
        pages = max(1, _INITIAL_CAPACITY // config.page_size)
        self._min = np.empty((pages, d), dtype=np.float64)
        self._max = np.empty((pages, d), dtype=np.float64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def __repr__(self) -> str:
        c = self.config
        return (
            f"KvCache(head_dim={c.head_dim}, page_size={c.page_size}, "
            f"tokens={self._n}, pages={self.num_pages})"
        )

    @property
    def token_count(self) -> int:
        return self._n

    @property
    def num_pages(self) -> int:
        return -(-self._n // self.config.page_size)

    @property
    def keys(self) -> np.ndarray:
        """Read-only view of all stored keys, shape ``(token_count, head_dim)``."""
        view = self._keys[: self._n]
        view.flags.writeable = False
        return view

    @property
    def keys_by_channel(self) -> np.ndarray:
        """Read-only channel-major keys, shape ``(head_dim, token_count)``."""
        view = self._keys_t[:, : self._n]
        view.flags.writeable = False
        return view

    @property
    def values(self) -> np.ndarray:
        view = self._values[: self._n]
        view.flags.writeable = False
        return view

    @property
    def min_keys(self) -> np.ndarray:
        """Per-page channel minima, shape ``(num_pages, head_dim)``."""
        view = self._min[: self.num_pages]
        view.flags.writeable = False
        return view

    @property
    def max_keys(self) -> np.ndarray:
        view = self._max[: self.num_pages]
        view.flags.writeable = False
        return view

    def _check_vector(self, name: str, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.config.head_dim,):
            raise ValueError(
                f"{name} has shape {arr.shape}, expected ({self.config.head_dim},)"
            )
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contains non-finite entries")
        return arr

    def _reserve(self, tokens: int) -> None:
        if tokens > len(self._keys):
            cap = max(tokens, 2 * len(self._keys))
            for attr in ("_keys", "_values"):
                old = getattr(self, attr)
                new = np.empty((cap, self.config.head_dim), dtype=np.float64)
                new[: self._n] = old[: self._n]
                setattr(self, attr, new)
            new_t = np.empty((self.config.head_dim, cap), dtype=np.float64)
            new_t[:, : self._n] = self._keys_t[:, : self._n]
            self._keys_t = new_t
        pages = -(-tokens // self.config.page_size)
        if pages > len(self._min):
            cap = max(pages, 2 * len(self._min))
            used = self.num_pages
            for attr in ("_min", "_max"):
                old = getattr(self, attr)
                new = np.empty((cap, self.config.head_dim), dtype=np.float64)
                new[:used] = old[:used]
                setattr(self, attr, new)

    def append(self, key, value) -> int:
        """Store one token and fold its key into its page's metadata.

        Returns the new token's index.
        """
        k = self._check_vector("key", key)
        v = self._check_vector("value", value)
        t = self._n
        self._reserve(t + 1)
        self._keys[t] = k
        self._keys_t[:, t] = k
        self._values[t] = v
        page, offset = divmod(t, self.config.page_size)
        if offset == 0:
            self._min[page] = k
            self._max[page] = k
        else:
            np.minimum(self._min[page], k, out=self._min[page])
            np.maximum(self._max[page], k, out=self._max[page])
        self._n = t + 1
        return t

    def extend(self, keys, values) -> None:
        """Append many tokens at once. Metadata ends up identical to repeated :meth:`append`."""
        ks = np.asarray(keys, dtype=np.float64)
        vs = np.asarray(values, dtype=np.float64)
        d = self.config.head_dim
        if ks.ndim != 2 or ks.shape[1] != d or vs.shape != ks.shape:
            raise ValueError(f"keys/values must both have shape (n, {d})")
        if not (np.isfinite(ks).all() and np.isfinite(vs).all()):
            raise ValueError("keys/values contain non-finite entries")
        n = len(ks)
        if n == 0:
            return
        S = self.config.page_size
        start = self._n
        # Top up the open partial page token by token, then bulk-fill whole pages.
        head = min(n, (-start) % S)
        for i in range(head):
            self.append(ks[i], vs[i])
        rest_k, rest_v = ks[head:], vs[head:]
        if len(rest_k) == 0:
            return
        t0 = self._n
        self._reserve(t0 + len(rest_k))
        self._keys[t0 : t0 + len(rest_k)] = rest_k
        self._keys_t[:, t0 : t0 + len(rest_k)] = rest_k.T
        self._values[t0 : t0 + len(rest_k)] = rest_v
        p0 = t0 // S
        starts = np.arange(0, len(rest_k), S)
        self._min[p0 : p0 + len(starts)] = np.minimum.reduceat(rest_k, starts, axis=0)
        self._max[p0 : p0 + len(starts)] = np.maximum.reduceat(rest_k, starts, axis=0)
        self._n = t0 + len(rest_k)

    def page_bounds(self, page_index: int) -> tuple[int, int]:
        """Half-open token range ``[start, stop)`` of a page."""
        self._check_page(page_index)
        S = self.config.page_size
        start = page_index * S
        return start, min(start + S, self._n)

    def _check_page(self, page_index: int) -> None:
        if not 0 <= page_index < self.num_pages:
            raise IndexError(
                f"page index {page_index} out of range for {self.num_pages} pages"
            )

    def page_metadata(self, page_index: int) -> PageMetadata:
        self._check_page(page_index)
        return PageMetadata(
            min_key=self._min[page_index].copy(), max_key=self._max[page_index].copy()
        )

    def page(self, page_index: int) -> Page:
        start, stop = self.page_bounds(page_index)
        return Page(
            keys=self._keys[start:stop].copy(),
            values=self._values[start:stop].copy(),
            metadata=self.page_metadata(page_index),
            capacity=self.config.page_size,
        )

    @property
    def pages(self) -> list[Page]:
        return [self.page(i) for i in range(self.num_pages)]

    def page_tokens(self, page_indices) -> np.ndarray:
        """Ascending token indices covered by the given pages."""
        pages = np.unique(np.asarray(page_indices, dtype=np.int64))
        if len(pages) == 0:
            return np.zeros(0, dtype=np.int64)
        if pages[0] < 0 or pages[-1] >= self.num_pages:
            raise IndexError(f"page indices out of range for {self.num_pages} pages")
        S = self.config.page_size
        tokens = (pages[:, None] * S + np.arange(S)[None, :]).ravel()
        return tokens[tokens < self._n]


def new_cache(config: CacheConfig) -> KvCache:
    return KvCache(config)


def append_token(cache: KvCache, key, value) -> int:
    return cache.append(key, value)


def page_metadata(cache: KvCache, page_index: int) -> PageMetadata:
    return cache.page_metadata(page_index)


def scan_metadata(keys: np.ndarray) -> PageMetadata:
    """Recompute a page's metadata from scratch by scanning its keys."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or len(keys) == 0:
        raise ValueError("scan_metadata needs a non-empty (n, d) array")
    return PageMetadata(min_key=keys.min(axis=0), max_key=keys.max(axis=0))


def expected_page_count(token_count: int, page_size: int) -> int:
    return math.ceil(token_count / page_size)
