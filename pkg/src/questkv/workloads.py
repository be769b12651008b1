"""Seeded synthetic decode traces and the binary trace file format.

Randomness comes from Xoshiro256** (``randomgen.Xoshiro256``) driven through
``numpy.random.Generator``; a trace is a pure function of its seed and
parameters. Keys, values and queries are drawn as three consecutive
``(length, head_dim)`` float32 blocks from N(0, 1) (numpy's float32
ziggurat) and scaled by ``float32(1/sqrt(head_dim))``.

Trace file layout (little-endian)::

    offset 0   4 bytes   magic b"QKVT"
    offset 4   1 byte    version (1)
    offset 5   uint32    head_dim
    offset 9   uint32    length (steps)
    offset 13  float32[length][3][head_dim]   key, value, query per step
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from randomgen import Xoshiro256

MAGIC = b"QKVT"
VERSION = 1
_HEADER = struct.Struct("<4sBII")
PRNG_NAME = "xoshiro256**"


class TraceFormatError(ValueError):
    """Malformed trace file."""


class TraceTruncatedError(TraceFormatError):
    """Trace file ended before all declared steps were read."""


@dataclass(eq=False)
class DecodeTrace:
    """Per-step key, value and query vectors. Step ``t``'s query sees tokens ``0..t``.

    Equality compares ``head_dim`` and the raw float32 bits of the three
    arrays; ``metadata`` is provenance only and is not stored in trace files.
    """

    head_dim: int
    keys: np.ndarray
    values: np.ndarray
    queries: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        shapes = {a.shape for a in (self.keys, self.values, self.queries)}
        if len(shapes) != 1:
            raise ValueError(f"keys/values/queries shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[1] != self.head_dim:
            raise ValueError(f"arrays must be (length, {self.head_dim}), got {shape}")

    def __len__(self) -> int:
        return len(self.keys)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DecodeTrace):
            return NotImplemented
        return self.head_dim == other.head_dim and all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.keys, other.keys), (self.values, other.values),
                         (self.queries, other.queries))
        )

    @property
    def steps(self):
        for k, v, q in zip(self.keys, self.values, self.queries):
            yield {"key": k, "value": v, "query": q}


@dataclass(frozen=True)
class NeedleSpec:
    needle_position: int
    alignment: float = 10.0
    noise_scale: float = 0.1


def _generator(seed: int, attempt: int = 0) -> np.random.Generator:
    if attempt == 0:
        return np.random.Generator(Xoshiro256(seed))
    return np.random.Generator(Xoshiro256(np.random.SeedSequence([seed, attempt])))


def _gaussian_block(rng: np.random.Generator, length: int, head_dim: int) -> np.ndarray:
    block = rng.standard_normal((length, head_dim), dtype=np.float32)
    block *= np.float32(1.0 / np.sqrt(head_dim))
    return block


def gen_gaussian_trace(seed: int, length: int, head_dim: int) -> DecodeTrace:
    if length < 1:
        raise ValueError(f"length must be at least 1, got {length}")
    if head_dim < 1:
        raise ValueError(f"head_dim must be at least 1, got {head_dim}")
    rng = _generator(seed)
    keys = _gaussian_block(rng, length, head_dim)
    values = _gaussian_block(rng, length, head_dim)
    queries = _gaussian_block(rng, length, head_dim)
    meta = {"kind": "gaussian", "seed": seed, "length": length,
            "head_dim": head_dim, "prng": PRNG_NAME}
    return DecodeTrace(head_dim, keys, values, queries, meta)


def gen_needle_trace(seed: int, length: int, head_dim: int, spec: NeedleSpec,
                     max_attempts: int = 16) -> DecodeTrace:
    """Gaussian trace with one key planted along the final query's direction.

    The needle key is ``alignment * q_hat + noise_scale * z`` with ``q_hat`` the
    unit probe query and ``z`` drawn like the other keys. The planted key must
    be the strict argmax logit of the probe; otherwise the trace is redrawn
    from a sub-seed. ``alignment == 0`` returns the plain Gaussian trace.
    """
    if not 0 <= spec.needle_position < length:
        raise ValueError(
            f"needle_position {spec.needle_position} outside trace of length {length}"
        )
    if spec.alignment < 0 or spec.noise_scale < 0:
        raise ValueError("alignment and noise_scale must be non-negative")
    if spec.alignment == 0:
        return gen_gaussian_trace(seed, length, head_dim)

    pos = spec.needle_position
    for attempt in range(max_attempts):
        rng = _generator(seed, attempt)
        keys = _gaussian_block(rng, length, head_dim)
        values = _gaussian_block(rng, length, head_dim)
        queries = _gaussian_block(rng, length, head_dim)
        noise = rng.standard_normal(head_dim) / np.sqrt(head_dim)

        probe = queries[-1].astype(np.float64)
        q_hat = probe / np.linalg.norm(probe)
        keys[pos] = (spec.alignment * q_hat + spec.noise_scale * noise).astype(np.float32)

        logits = keys.astype(np.float64) @ probe
        distractors = np.delete(logits, pos)
        best_other = distractors.max() if len(distractors) else -np.inf
        if logits[pos] > best_other:
            break
    else:
        raise RuntimeError(f"needle never dominated after {max_attempts} attempts")

    noise_std = float(distractors.std()) if len(distractors) > 1 else 0.0
    margin = float(logits[pos] - best_other) if len(distractors) else float("inf")
    meta = {
        "kind": "needle", "seed": seed, "length": length, "head_dim": head_dim,
        "prng": PRNG_NAME, "attempt": attempt, "needle_position": pos,
        "alignment": spec.alignment, "noise_scale": spec.noise_scale,
        "needle_logit": float(logits[pos]), "logit_margin": margin,
        "noise_logit_std": noise_std,
        "margin_sigmas": margin / noise_std if noise_std > 0 else float("inf"),
    }
    return DecodeTrace(head_dim, keys, values, queries, meta)


def write_trace(path, trace: DecodeTrace) -> None:
    steps = np.stack([trace.keys, trace.values, trace.queries], axis=1)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, trace.head_dim, len(trace)))
        f.write(steps.astype("<f4").tobytes())


def read_trace(path) -> DecodeTrace:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if data[: len(MAGIC)] != MAGIC[: len(data)]:
            raise TraceFormatError("bad magic bytes")
        raise TraceTruncatedError(f"header truncated: {len(data)} of {_HEADER.size} bytes")
    magic, version, head_dim, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported trace version {version}")
    if head_dim == 0:
        raise TraceFormatError("head_dim is zero")
    expected = length * 3 * head_dim * 4
    body = data[_HEADER.size :]
    if len(body) < expected:
        raise TraceTruncatedError(
            f"expected {expected} payload bytes for {length} steps, found {len(body)}"
        )
    if len(body) > expected:
        raise TraceFormatError(
            f"payload is {len(body)} bytes, {length} steps of head_dim {head_dim} "
            f"need {expected}: dimension mismatch"
        )
    steps = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(length, 3, head_dim)
    return DecodeTrace(
        head_dim,
        np.ascontiguousarray(steps[:, 0]),
        np.ascontiguousarray(steps[:, 1]),
        np.ascontiguousarray(steps[:, 2]),
        {"kind": "file", "path": str(path)},
    )


def write_trace_metadata_csv(path, trace: DecodeTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["key", "value"])
        for key in sorted(trace.metadata):
            writer.writerow([key, trace.metadata[key]])
