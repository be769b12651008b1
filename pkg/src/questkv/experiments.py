"""Experiment drivers behind the CLI: recall grid, traffic grid, CPU bench."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from questkv.attention import attend_tokens, attention_logits, full_attention, sparse_attention
from questkv.counters import ByteCounter
from questkv.criticality import SelectionConfig, score_pages, select_top_k
from questkv.kv_store import CacheConfig, KvCache
from questkv.metrics import (
    counted_bytes,
    output_error,
    recall_of,
    top_n_tokens,
    traffic_fraction,
)
from questkv.policies import PolicyKind, make_policy, policy_step
from questkv.workloads import DecodeTrace, gen_gaussian_trace

RECALL_FIELDS = ["seed", "step", "policy", "budget", "recall", "traffic_fraction", "output_error"]
TRAFFIC_FIELDS = [
    "page_size", "token_count", "token_budget", "head_dim", "bytes_per_element",
    "fraction_model", "bytes_loaded_counted", "bytes_full", "counted_fraction",
    "overhead_warning",
]
BENCH_FIELDS = [
    "kernel", "page_size", "token_count", "token_budget", "head_dim", "reps", "warmup",
    "bytes_touched", "bytes_full", "bytes_ratio", "mean_seconds", "min_seconds",
]
TIMING_FIELDS = ("mean_seconds", "min_seconds")


def max_workers() -> int:
    """Worker cap from ``QUESTKV_THREADS``, defaulting to the CPU count."""
    env = os.environ.get("QUESTKV_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"QUESTKV_THREADS must be an integer, got {env!r}") from None
    return cpus


@dataclass(frozen=True)
class RecallSetup:
    policies: tuple[str, ...] = ("quest", "h2o", "tova", "streaming")
    budgets: tuple[int, ...] = (32, 64, 128, 256, 512)
    page_size: int = 16
    n: int = 10
    force_include_recent: bool = True
    sink_count: int = 4
    with_error: bool = True


def simulate_recall(trace: DecodeTrace, setup: RecallSetup, seed_label=None) -> list[dict]:
    """Replay one trace token by token and score every (policy, budget) each step.

    Steps with fewer than ``setup.n`` tokens in the cache still advance the
    policies but produce no rows. Returns per-step rows followed by one
    ``step="mean"`` row per (policy, budget).
    """
    if max(setup.budgets) > len(trace):
        raise ValueError(
            f"budget {max(setup.budgets)} exceeds trace length {len(trace)}"
        )
    cache = KvCache(CacheConfig(head_dim=trace.head_dim, page_size=setup.page_size))
    grid = [(PolicyKind(p), b) for p in setup.policies for b in setup.budgets]
    states = [
        make_policy(kind, budget, page_size=setup.page_size,
                    force_include_recent=setup.force_include_recent,
                    sink_count=min(setup.sink_count, budget))
        for kind, budget in grid
    ]
    label = trace.metadata.get("seed", "") if seed_label is None else seed_label
    rows: list[dict] = []
    sums = {cell: [[], [], []] for cell in grid}
    for t in range(len(trace)):
        cache.append(trace.keys[t], trace.values[t])
        q = trace.queries[t].astype(np.float64)
        n_tokens = t + 1
        scored = n_tokens >= setup.n
        logits = attention_logits(q, cache)
        if scored:
            top = top_n_tokens(logits, setup.n)
            dense = full_attention(q, cache).output if setup.with_error else None
        for (kind, budget), state in zip(grid, states):
            selected = policy_step(state, q, cache, t, logits)
            if not scored:
                continue
            recall = recall_of(selected, top)
            loaded = len(selected)
            if kind is PolicyKind.QUEST:
                loaded += cache.num_pages
            fraction = loaded / n_tokens
            err = (output_error(attend_tokens(q, cache, selected).output, dense)
                   if setup.with_error else float("nan"))
            rows.append({"seed": label, "step": t, "policy": kind.value, "budget": budget,
                         "recall": recall, "traffic_fraction": fraction,
                         "output_error": err})
            acc = sums[(kind, budget)]
            acc[0].append(recall)
            acc[1].append(fraction)
            acc[2].append(err)
    for (kind, budget), (rec, frac, err) in sums.items():
        rows.append(_mean_row(label, kind.value, budget, rec, frac, err))
    return rows


def _mean(values) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def _mean_row(label, policy, budget, rec, frac, err) -> dict:
    return {"seed": label, "step": "mean", "policy": policy, "budget": budget,
            "recall": _mean(rec), "traffic_fraction": _mean(frac),
            "output_error": _mean(err)}


def _recall_task(args) -> list[dict]:
    seed, length, head_dim, setup = args
    return simulate_recall(gen_gaussian_trace(seed, length, head_dim), setup)


def run_recall_grid(seeds, length: int, head_dim: int, setup: RecallSetup,
                    workers: int | None = None) -> list[dict]:
    """Recall over several Gaussian traces, plus ``seed="all"`` mean rows.

    Results are gathered in seed order, so worker count never changes output.
    """
    seeds = list(seeds)
    tasks = [(s, length, head_dim, setup) for s in seeds]
    workers = min(workers or max_workers(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trace = list(pool.map(_recall_task, tasks))
    else:
        per_trace = [_recall_task(t) for t in tasks]
    rows = [r for chunk in per_trace for r in chunk]
    rows.extend(summarize(rows))
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Mean over every per-step row of all traces, one row per (policy, budget)."""
    cells: dict[tuple[str, int], list[list[float]]] = {}
    for r in rows:
        if r["step"] == "mean" or r["seed"] == "all":
            continue
        acc = cells.setdefault((r["policy"], r["budget"]), [[], [], []])
        acc[0].append(r["recall"])
        acc[1].append(r["traffic_fraction"])
        acc[2].append(r["output_error"])
    return [_mean_row("all", p, b, *acc) for (p, b), acc in cells.items()]


def mean_recall(rows: list[dict], policy: str, budget: int, seed="all") -> float:
    for r in rows:
        if (r["step"] == "mean" and r["policy"] == policy and r["budget"] == budget
                and r["seed"] == seed):
            return r["recall"]
    raise KeyError((policy, budget, seed))


def _filled_cache(length: int, head_dim: int, page_size: int, seed: int,
                  bytes_per_element: int = 2) -> tuple[KvCache, np.ndarray]:
    trace = gen_gaussian_trace(seed, length, head_dim)
    cache = KvCache(CacheConfig(head_dim, page_size, bytes_per_element))
    cache.extend(trace.keys, trace.values)
    return cache, trace.queries[-1].astype(np.float64)


def quest_step_bytes(cache: KvCache, query, token_budget: int,
                     force_include_recent: bool = True) -> ByteCounter:
    """Run one instrumented Quest decode step and return its counter."""
    counter = ByteCounter(mode="quest", token_budget=token_budget)
    cfg = SelectionConfig(token_budget, force_include_recent=force_include_recent)
    pages = select_top_k(score_pages(query, cache, counter), cfg, cache)
    sparse_attention(query, cache, pages, counter)
    return counter


def traffic_rows(page_sizes, token_counts, budgets, head_dim: int = 128,
                 bytes_per_element: int = 2, seed: int = 0, counted: bool = True) -> list[dict]:
    """Model fraction and, when ``counted``, instrumented bytes for each grid point."""
    rows = []
    caches: dict[tuple[int, int], tuple[KvCache, np.ndarray]] = {}
    for L in token_counts:
        for S in page_sizes:
            for B in budgets:
                if B > L or B < S:
                    continue
                frac = traffic_fraction(S, L, B)
                row = {"page_size": S, "token_count": L, "token_budget": B,
                       "head_dim": head_dim, "bytes_per_element": bytes_per_element,
                       "fraction_model": frac}
                if counted:
                    if (L, S) not in caches:
                        caches.clear()
                        caches[(L, S)] = _filled_cache(L, head_dim, S, seed, bytes_per_element)
                    cache, q = caches[(L, S)]
                    report = counted_bytes(quest_step_bytes(cache, q, B))
                    row.update(bytes_loaded_counted=report.bytes_loaded_counted,
                               bytes_full=report.bytes_full,
                               counted_fraction=report.counted_fraction,
                               overhead_warning=report.overhead_warning or frac >= 1.0)
                else:
                    full = 2 * head_dim * bytes_per_element * L
                    row.update(bytes_loaded_counted="", bytes_full=full, counted_fraction="",
                               overhead_warning=frac >= 1.0 or S == 1)
                rows.append(row)
    return rows


def _time(fn, reps: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return math.fsum(samples) / len(samples), min(samples)


def bench_rows(token_count: int, page_size: int, token_budget: int, head_dim: int = 128,
               reps: int = 5, warmup: int = 1, seed: int = 0,
               force_include_recent: bool = True) -> list[dict]:
    """CPU wall-clock per decode step for dense attention and each Quest stage.

    Timings are a host-CPU analog only; the bytes columns are the portable result.
    """
    if token_budget > token_count:
        raise ValueError(f"budget {token_budget} exceeds length {token_count}")
    cache, q = _filled_cache(token_count, head_dim, page_size, seed)
    cfg = SelectionConfig(token_budget, force_include_recent=force_include_recent)
    scores = score_pages(q, cache)
    pages = select_top_k(scores, cfg, cache)

    full_counter = ByteCounter()
    full_attention(q, cache, full_counter)
    est_counter = ByteCounter(mode="quest", token_budget=token_budget)
    score_pages(q, cache, est_counter)
    sparse_counter = ByteCounter(mode="quest", token_budget=token_budget)
    sparse_attention(q, cache, pages, sparse_counter)
    quest_counter = quest_step_bytes(cache, q, token_budget, force_include_recent)
    bytes_full = full_counter.bytes_loaded

    def quest_total():
        s = score_pages(q, cache)
        sparse_attention(q, cache, select_top_k(s, cfg, cache))

    kernels = [
        ("full", lambda: full_attention(q, cache), bytes_full),
        ("quest-estimate", lambda: score_pages(q, cache), est_counter.bytes_loaded),
        ("quest-topk", lambda: select_top_k(scores, cfg, cache), 0),
        ("quest-sparse", lambda: sparse_attention(q, cache, pages), sparse_counter.bytes_loaded),
        ("quest-total", quest_total, quest_counter.bytes_loaded),
    ]
    rows = []
    for name, fn, touched in kernels:
        mean_s, min_s = _time(fn, reps, warmup)
        rows.append({"kernel": name, "page_size": page_size, "token_count": token_count,
                     "token_budget": token_budget, "head_dim": head_dim, "reps": reps,
                     "warmup": warmup, "bytes_touched": touched, "bytes_full": bytes_full,
                     "bytes_ratio": touched / bytes_full, "mean_seconds": mean_s,
                     "min_seconds": min_s})
    return rows
