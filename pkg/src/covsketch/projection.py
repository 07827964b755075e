"""Reproducible random projection matrices with known entry moments.

Two entry distributions are supported: the sparse sign family, whose entries
take values {-1, 0, +1} with probabilities {1/(2s), 1 - 1/s, 1/(2s)} for a
sparsity parameter s >= 1, and the standard Gaussian N(0, 1). Sparse matrices
are stored unscaled (values are hard +-1); the 1/s second moment is carried
analytically by downstream consumers instead of being materialized.

Every matrix is a pure function of (master_seed, sample_index): realizations
are produced by a Philox 4x64 counter-based generator keyed with exactly that
pair, so a matrix can be regenerated on demand instead of stored. The draw
order is fixed (support positions first, then signs) and is part of the wire
contract for sketch files.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SPARSE_SIGN = "sparse_sign"
GAUSSIAN = "gaussian"

_MAX_SAMPLE_INDEX = 2**63


@dataclass(frozen=True)
class DistributionSpec:
    """Zero-mean entry distribution with closed-form second/fourth moments."""

    family: str
    s: float | None = None

    def __post_init__(self) -> None:
        if self.family == SPARSE_SIGN:
            if self.s is None:
                raise ValueError("sparse_sign distribution requires a sparsity s")
            if not math.isfinite(self.s) or self.s < 1.0:
                raise ValueError(
                    f"sparsity s must be >= 1 (entry probabilities are "
                    f"{{1/2s, 1-1/s, 1/2s}}), got s={self.s}"
                )
        elif self.family == GAUSSIAN:
            if self.s is not None:
                raise ValueError("gaussian distribution takes no sparsity parameter")
        else:
            raise ValueError(f"unknown distribution family: {self.family!r}")

    @classmethod
    def sparse_sign(cls, s: float) -> "DistributionSpec":
        return cls(SPARSE_SIGN, float(s))

    @classmethod
    def gaussian(cls) -> "DistributionSpec":
        return cls(GAUSSIAN)

    @property
    def mu2(self) -> float:
        return 1.0 if self.family == GAUSSIAN else 1.0 / self.s

    @property
    def mu4(self) -> float:
        return 3.0 if self.family == GAUSSIAN else 1.0 / self.s

    @property
    def kappa(self) -> float:
        # mu4 / mu2^2 - 3; reduces to s - 3 for the sparse sign family.
        return 0.0 if self.family == GAUSSIAN else self.s - 3.0

    def to_json_dict(self) -> dict:
        return {"family": self.family, "s": self.s}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DistributionSpec":
        return cls(family=obj["family"], s=obj.get("s"))


def moments(dist: DistributionSpec) -> tuple[float, float, float]:
    """Exact (mu2, mu4, kappa) of the entry distribution."""
    return dist.mu2, dist.mu4, dist.kappa


@dataclass(frozen=True)
class ProjectionSpec:
    """Everything needed to regenerate every projection matrix of a run."""

    dist: DistributionSpec
    p: int
    m: int
    master_seed: int

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"ambient dimension p must be positive, got {self.p}")
        if not 1 <= self.m < self.p:
            raise ValueError(
                f"measurement dimension must satisfy 1 <= m < p, got m={self.m}, p={self.p}"
            )
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")
        if self.dist.family == SPARSE_SIGN and self.gamma >= 1.0:
            warnings.warn(
                f"compression factor gamma = m/s = {self.gamma:.3g} >= 1: the "
                "estimator stays correct but the sparsity cost advantage is gone",
                stacklevel=2,
            )

    @property
    def gamma(self) -> float | None:
        """Compression factor m/s; defined only for the sparse sign family."""
        if self.dist.family != SPARSE_SIGN:
            return None
        return self.m / self.dist.s

    def to_json_dict(self) -> dict:
        return {
            "family": self.dist.family,
            "s": self.dist.s,
            "p": self.p,
            "m": self.m,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ProjectionSpec":
        dist = DistributionSpec(family=obj["family"], s=obj.get("s"))
        return cls(dist=dist, p=int(obj["p"]), m=int(obj["m"]),
                   master_seed=int(obj["master_seed"]))


@dataclass
class SparseProjection:
    """One realized p x m sparse sign matrix in compressed sparse column form.

    ``rows[indptr[j]:indptr[j+1]]`` are the (strictly increasing) row indices
    of column j and ``values`` the matching +-1 entries.
    """

    p: int
    m: int
    indptr: np.ndarray
    rows: np.ndarray
    values: np.ndarray
    _col_ids: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def nnz(self) -> int:
        return self.rows.size

    @property
    def col_ids(self) -> np.ndarray:
        """Column index of every stored entry (cached)."""
        if self._col_ids is None:
            counts = np.diff(self.indptr)
            self._col_ids = np.repeat(np.arange(self.m, dtype=np.int64), counts)
        return self._col_ids

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.rows[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.p, self.m))
        dense[self.rows, self.col_ids] = self.values
        return dense


def _sample_rng(master_seed: int, sample_index: int) -> np.random.Generator:
    key = np.array([master_seed, sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _bernoulli_support(rng: np.random.Generator, ncells: int, prob: float) -> np.ndarray:
    """Ascending flat indices of i.i.d. Bernoulli(prob) successes over range(ncells).

    Uses geometric gaps between successes, so the cost is O(number of
    successes) rather than O(ncells). Block sizes depend only on (ncells,
    prob), which keeps the consumed random stream a pure function of the
    generator state.
    """
    if prob >= 1.0:
        return np.arange(ncells, dtype=np.int64)
    mean = ncells * prob
    block = int(mean + 6.0 * math.sqrt(mean + 1.0)) + 16
    chunks: list[np.ndarray] = []
    last = -1
    while True:
        gaps = rng.geometric(prob, size=block)
        flat = last + np.cumsum(gaps)
        inside = flat[flat < ncells]
        chunks.append(inside)
        if inside.size < flat.size:
            break
        last = int(flat[-1])
        block = max(32, block // 4)
    return np.concatenate(chunks).astype(np.int64, copy=False)


def generate(spec: ProjectionSpec, sample_index: int) -> SparseProjection | np.ndarray:
    """Realize the projection matrix for one sample.

    Deterministic in (spec.master_seed, sample_index). Sparse sign specs give
    a :class:`SparseProjection`; Gaussian specs give a dense (p, m) array.
    Each sparse entry is independently nonzero with probability 1/s and, given
    nonzero, +-1 with equal probability.
    """
    if not 0 <= sample_index < _MAX_SAMPLE_INDEX:
        raise ValueError(f"sample_index must be in [0, 2^63), got {sample_index}")
    rng = _sample_rng(spec.master_seed, sample_index)
    p, m = spec.p, spec.m
    if spec.dist.family == GAUSSIAN:
        return rng.standard_normal((p, m))
    flat = _bernoulli_support(rng, p * m, 1.0 / spec.dist.s)
    signs = rng.integers(0, 2, size=flat.size).astype(np.float64) * 2.0 - 1.0
    # Flat indices are column-major, so they are already grouped by column
    # with strictly increasing rows inside each column.
    edges = np.arange(m + 1, dtype=np.int64) * p
    indptr = np.searchsorted(flat, edges).astype(np.int64)
    rows = (flat % p).astype(np.int64)
    return SparseProjection(p=p, m=m, indptr=indptr, rows=rows, values=signs)


def empirical_kurtosis(spec: ProjectionSpec, num_entries: int) -> float:
    """Sample excess kurtosis of generated matrix entries (zeros included)."""
    if num_entries < 10**4:
        raise ValueError(f"need at least 1e4 entries for a stable estimate, got {num_entries}")
    per_matrix = spec.p * spec.m
    draws = []
    collected = 0
    index = 0
    while collected < num_entries:
        R = generate(spec, index)
        dense = R if isinstance(R, np.ndarray) else R.to_dense()
        draws.append(dense.ravel())
        collected += per_matrix
        index += 1
    entries = np.concatenate(draws)[:num_entries]
    centered = entries - entries.mean()
    m2 = np.mean(centered**2)
    m4 = np.mean(centered**4)
    return float(m4 / m2**2 - 3.0)
