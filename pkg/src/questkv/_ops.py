"""Small numeric helpers shared by scoring and attention."""

from __future__ import annotations

import numpy as np


def channel_sum(rows: np.ndarray) -> np.ndarray:
    """Sum each row of an ``(n, d)`` array over its channels, ascending channel order.

    Scores and logits both go through :func:`ordered_sum`, which is what makes
    a one-token page score equal its logit bit for bit.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {rows.shape}")
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return ordered_sum(np.ascontiguousarray(rows.T))


def ordered_sum(columns: np.ndarray) -> np.ndarray:
    """Sum a ``(d, n)`` array over axis 0 as ``((x0 + x1) + x2) + ...``.

    ``np.add.reduce`` over the outer axis of a C-contiguous array with at
    least two columns folds row by row. When the reduced axis is the only
    non-trivial one (``n == 1``) numpy switches to pairwise summation, so that
    case, and any non-C-contiguous input, goes through the slower but always
    sequential ``accumulate``.
    """
    if columns.ndim == 2 and columns.shape[1] >= 2 and columns.flags.c_contiguous:
        return np.add.reduce(columns, axis=0)
    return np.add.accumulate(columns, axis=0)[-1]


def token_sum(weighted: np.ndarray) -> np.ndarray:
    """Sum an ``(n, d)`` array over tokens in ascending token order."""
    return ordered_sum(np.ascontiguousarray(weighted, dtype=np.float64))
