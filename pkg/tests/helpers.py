"""Shared test utilities."""

from __future__ import annotations

import numpy as np

from covsketch.projection import SparseProjection


def sparse_from_columns(p: int, m: int, columns) -> SparseProjection:
    """Build a SparseProjection from per-column [(row, value), ...] lists."""
    indptr = [0]
    rows: list[int] = []
    vals: list[float] = []
    for col in columns:
        for r, v in col:
            rows.append(r)
            vals.append(float(v))
        indptr.append(len(rows))
    return SparseProjection(
        p=p,
        m=m,
        indptr=np.asarray(indptr, dtype=np.int64),
        rows=np.asarray(rows, dtype=np.int64),
        values=np.asarray(vals, dtype=np.float64),
    )


def random_symmetric(rng: np.random.Generator, p: int) -> np.ndarray:
    A = rng.standard_normal((p, p))
    return (A + A.T) / 2.0
