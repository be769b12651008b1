"""Recall, output error, memory-traffic model and byte accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from questkv.attention import attention_logits, softmax_weights
from questkv.counters import ByteCounter, InstrumentationError
from questkv.kv_store import KvCache


@dataclass
class RecallReport:
    per_step_recall: list[float] = field(default_factory=list)
    n: int = 10
    budget: int | None = None

    @property
    def mean_recall(self) -> float:
        if not self.per_step_recall:
            return float("nan")
        return math.fsum(self.per_step_recall) / len(self.per_step_recall)


@dataclass(frozen=True)
class TrafficReport:
    fraction_model: float
    bytes_loaded_counted: int
    bytes_full: int
    page_size: int
    token_budget: int
    token_count: int
    # Set when estimation alone costs as much as dense attention (page_size 1)
    # or the model predicts loading more than the whole cache.
    overhead_warning: bool = False

    @property
    def counted_fraction(self) -> float:
        return self.bytes_loaded_counted / self.bytes_full

    @property
    def slack(self) -> float:
        """Largest allowed gap between counted and modelled fraction: one page of KV."""
        per_token = self.bytes_full / self.token_count
        return self.page_size * per_token / self.bytes_full


def top_n_tokens(logits: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` largest logits, ties to the lower index."""
    logits = np.asarray(logits, dtype=np.float64)
    order = np.lexsort((np.arange(len(logits)), -logits))
    return order[:n]


def recall_of(selected, top: np.ndarray) -> float:
    """Fraction of ``top`` (distinct token indices) present in ``selected``."""
    selected = np.asarray(selected, dtype=np.int64)
    top = np.asarray(top, dtype=np.int64)
    size = int(max(selected.max(initial=-1), top.max(initial=-1))) + 1
    mask = np.zeros(size, dtype=bool)
    mask[selected] = True
    return int(mask[top].sum()) / len(top)


def recall_at_n(selected_token_set, query, cache: KvCache, n: int = 10) -> float:
    """Share of the dense top-``n`` tokens (by logit) that appear in the selection."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > cache.token_count:
        raise ValueError(f"n={n} exceeds token_count={cache.token_count}")
    top = top_n_tokens(attention_logits(query, cache), n)
    return recall_of(list(selected_token_set), top)


def traffic_fraction(page_size: int, token_count: int, token_budget: int) -> float:
    """Modelled share of dense KV bytes loaded by one Quest decode step.

    ``1/page_size`` is the estimation term (a min and a max vector per page,
    about one key/value pair's worth). ``K*page_size/token_count`` is the
    attention term for the ``K = token_budget // page_size`` selected pages.
    The Top-K reduction itself is not counted.
    """
    for name, v in (("page_size", page_size), ("token_count", token_count),
                    ("token_budget", token_budget)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    if token_budget > token_count:
        raise ValueError(f"token_budget {token_budget} exceeds token_count {token_count}")
    k = token_budget // page_size
    return 1.0 / page_size + (k * page_size) / token_count


def model_fraction(page_size: int, token_count: int, token_budget: int) -> float:
    """Page-count form of the model: ``1/S + K/P`` with ``K`` clamped to ``P``."""
    pages = -(-token_count // page_size)
    k = min(token_budget // page_size, pages)
    return 1.0 / page_size + k / pages


def counted_bytes(counter: ByteCounter | None) -> TrafficReport:
    if counter is None or not counter.enabled:
        raise InstrumentationError("byte counting was not enabled for this step")
    if counter.token_count == 0:
        raise InstrumentationError("counter recorded no attention step")
    bytes_full = 2 * counter.vector_bytes * counter.token_count
    if counter.mode == "dense":
        fraction = 1.0
        budget = counter.token_count
    else:
        budget = counter.token_budget if counter.token_budget is not None else counter.token_count
        fraction = model_fraction(counter.page_size, counter.token_count, budget)
    return TrafficReport(
        fraction_model=fraction,
        bytes_loaded_counted=counter.bytes_loaded,
        bytes_full=bytes_full,
        page_size=counter.page_size,
        token_budget=budget,
        token_count=counter.token_count,
        overhead_warning=fraction >= 1.0 or counter.page_size == 1,
    )


def oracle_sparsity(query, cache: KvCache, mass_threshold: float) -> int:
    """Fewest tokens, taken by descending softmax weight, holding ``mass_threshold`` of the mass.

    This is an attention-mass stand-in for a perplexity-based sparsity probe.
    """
    if not 0.0 < mass_threshold < 1.0:
        raise ValueError(f"mass_threshold must be in (0, 1), got {mass_threshold}")
    weights = softmax_weights(attention_logits(query, cache))
    order = np.lexsort((np.arange(len(weights)), -weights))
    cumulative = np.cumsum(weights[order])
    # Absorb the rounding of a length-L prefix sum so exact ties with the
    # threshold (e.g. uniform weights) count as reached.
    slack = 4 * len(weights) * np.finfo(np.float64).eps
    hit = np.nonzero(cumulative >= mass_threshold - slack)[0]
    return int(hit[0]) + 1 if len(hit) else len(weights)


def output_error(sparse_out, full_out) -> float:
    s = np.asarray(getattr(sparse_out, "output", sparse_out), dtype=np.float64)
    f = np.asarray(getattr(full_out, "output", full_out), dtype=np.float64)
    if s.shape != f.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {f.shape}")
    return float(np.linalg.norm(s - f) / (np.linalg.norm(f) + 1e-12))
