"""Byte-touched instrumentation for decode steps."""

from __future__ import annotations

from dataclasses import dataclass


class InstrumentationError(RuntimeError):
    """Raised when a traffic report is requested from a disabled or unused counter."""


@dataclass
class ByteCounter:
    """Accumulates bytes loaded by criticality estimation and attention.

    Pass one to :func:`questkv.criticality.estimate_all` and the attention
    functions; they add to it when ``enabled`` is true. Metadata loads are
    two key-sized vectors per page, attention loads a key and a value per
    attended token.
    """

    enabled: bool = True
    metadata_bytes: int = 0
    kv_bytes: int = 0
    pages_scored: int = 0
    tokens_attended: int = 0
    token_count: int = 0
    page_size: int = 0
    vector_bytes: int = 0
    token_budget: int | None = None
    mode: str = "dense"

    def record_metadata(self, pages: int, page_size: int, vector_bytes: int) -> None:
        if not self.enabled:
            return
        self.pages_scored += pages
        self.metadata_bytes += 2 * vector_bytes * pages
        self.page_size = page_size
        self.vector_bytes = vector_bytes

    def record_attention(
        self, tokens: int, token_count: int, page_size: int, vector_bytes: int
    ) -> None:
        if not self.enabled:
            return
        self.tokens_attended += tokens
        self.kv_bytes += 2 * vector_bytes * tokens
        self.token_count = token_count
        self.page_size = page_size
        self.vector_bytes = vector_bytes

    @property
    def bytes_loaded(self) -> int:
        return self.metadata_bytes + self.kv_bytes

    def reset(self) -> None:
        self.metadata_bytes = self.kv_bytes = 0
        self.pages_scored = self.tokens_attended = 0
