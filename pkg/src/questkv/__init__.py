"""Paged KV cache with query-aware (min/max bound) page selection."""

from questkv.attention import (
    AttentionOutput,
    attend_tokens,
    attention_logits,
    full_attention,
    softmax_weights,
    sparse_attention,
)
from questkv.counters import ByteCounter, InstrumentationError
from questkv.criticality import (
    PageScore,
    SelectionConfig,
    estimate_all,
    estimate_page_score,
    score_pages,
    select_tokens,
    select_top_k,
)
from questkv.kv_store import (
    CacheConfig,
    KvCache,
    Page,
    PageMetadata,
    append_token,
    new_cache,
    page_metadata,
)
from questkv.metrics import (
    RecallReport,
    TrafficReport,
    counted_bytes,
    oracle_sparsity,
    output_error,
    recall_at_n,
    traffic_fraction,
)
from questkv.policies import PolicyKind, PolicyState, eviction_is_permanent, make_policy, policy_step
from questkv.workloads import (
    DecodeTrace,
    NeedleSpec,
    gen_gaussian_trace,
    gen_needle_trace,
    read_trace,
    write_trace,
)

__version__ = "0.1.0"
