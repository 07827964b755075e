"""Dataset loading and synthetic data generation.

Loaders keep values exactly as stored (no centering or scaling happens here:
downstream covariances are uncentered second-moment matrices of whatever is
loaded). Matrix Market files default to columns-as-samples, matching the
p x n data-matrix convention; CSV defaults to rows-as-samples, matching the
usual tabular convention. Both are overridable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.io import mmread, mmwrite
from scipy.sparse import issparse

MODEL_SPIKED = "spiked"
MODEL_STABLE_RANK = "stable_rank"


@dataclass
class Dataset:
    """n dense samples of dimension p, stored as the columns of a matrix."""

    matrix: np.ndarray  # shape (p, n), float64
    source: str

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise ValueError(f"dataset needs a (p, n) matrix with n >= 1, got {self.matrix.shape}")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def sample(self, i: int) -> np.ndarray:
        return self.matrix[:, i]

    def samples(self) -> Iterator[np.ndarray]:
        for i in range(self.n):
            yield self.matrix[:, i]

    def covariance(self) -> np.ndarray:
        """Uncentered sample covariance (1/n) X X^T."""
        return self.matrix @ self.matrix.T / self.n


def load_matrix_market(path: str | Path, samples_as: str = "columns") -> Dataset:
    """Read a Matrix Market array or coordinate file (real, general/symmetric)."""
    path = Path(path)
    with open(path, "rt") as fh:
        banner = fh.readline()
    if "pattern" in banner.lower():
        raise ValueError(f"{path}: pattern (valueless) matrices are not supported")
    matrix = mmread(str(path))
    if issparse(matrix):
        matrix = matrix.toarray()
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if samples_as == "rows":
        matrix = matrix.T
    elif samples_as != "columns":
        raise ValueError(f"samples_as must be 'columns' or 'rows', got {samples_as!r}")
    return Dataset(matrix=matrix, source=str(path))


def save_matrix_market(dataset: Dataset | np.ndarray, path: str | Path) -> None:
    matrix = dataset.matrix if isinstance(dataset, Dataset) else np.asarray(dataset)
    mmwrite(str(path), matrix, precision=17)


def load_csv(path: str | Path, samples_as: str = "rows") -> Dataset:
    """Read a rectangular numeric CSV; errors name the offending row/column."""
    path = Path(path)
    rows: list[list[float]] = []
    with open(path, "rt", newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            parsed = []
            for colno, cell in enumerate(record, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell at row {lineno}, column {colno}: {cell!r}"
                    ) from None
            if rows and len(parsed) != len(rows[0]):
                raise ValueError(
                    f"{path}: ragged row {lineno} has {len(parsed)} cells, expected {len(rows[0])}"
                )
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    if samples_as == "rows":
        matrix = table.T
    elif samples_as == "columns":
        matrix = table
    else:
        raise ValueError(f"samples_as must be 'rows' or 'columns', got {samples_as!r}")
    return Dataset(matrix=matrix, source=str(path))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic dataset; a pure function of its fields."""

    model: str
    p: int
    n: int
    seed: int
    rank: int | None = None            # spiked: number of spikes
    spikes: tuple[float, ...] | None = None  # spiked: spike strengths
    sigma: float | None = None         # spiked: isotropic noise level
    beta: float | None = None          # stable_rank: target stable rank

    def __post_init__(self) -> None:
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be positive")
        if self.model == MODEL_SPIKED:
            if self.rank is None or self.spikes is None or self.sigma is None:
                raise ValueError("spiked model needs rank, spikes, and sigma")
            if self.rank >= self.p:
                raise ValueError(f"spike rank must satisfy r < p, got r={self.rank}, p={self.p}")
            if len(self.spikes) != self.rank:
                raise ValueError(f"expected {self.rank} spike strengths, got {len(self.spikes)}")
            if any(lam <= 0 for lam in self.spikes):
                raise ValueError("spike strengths must be positive")
            if self.sigma < 0:
                raise ValueError("noise level must be nonnegative")
        elif self.model == MODEL_STABLE_RANK:
            if self.beta is None:
                raise ValueError("stable_rank model needs a target beta")
            if not 1.0 <= self.beta <= self.p:
                raise ValueError(f"target stable rank must be in [1, p={self.p}], got {self.beta}")
        else:
            raise ValueError(f"unknown synthetic model: {self.model!r}")

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "p": self.p,
            "n": self.n,
            "seed": self.seed,
            "rank": self.rank,
            "spikes": list(self.spikes) if self.spikes is not None else None,
            "sigma": self.sigma,
            "beta": self.beta,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SynthSpec":
        spikes = obj.get("spikes")
        return cls(
            model=obj["model"],
            p=int(obj["p"]),
            n=int(obj["n"]),
            seed=int(obj["seed"]),
            rank=obj.get("rank"),
            spikes=tuple(spikes) if spikes is not None else None,
            sigma=obj.get("sigma"),
            beta=obj.get("beta"),
        )


def _seeded_orthonormal(rng: np.random.Generator, p: int, cols: int) -> np.ndarray:
    """QR-based orthonormal columns with signs fixed for reproducibility."""
    q, r = np.linalg.qr(rng.standard_normal((p, cols)))
    return q * np.sign(np.diag(r))


def generate_spiked(spec: SynthSpec) -> Dataset:
    """Low-rank-plus-noise Gaussian samples x = sum_j sqrt(lam_j) g_j u_j + sigma w.

    The population covariance is sum_j lam_j u_j u_j^T + sigma^2 I for
    orthonormal seeded directions u_j.
    """
    if spec.model != MODEL_SPIKED:
        raise ValueError(f"expected a {MODEL_SPIKED!r} spec, got {spec.model!r}")
    rng = np.random.default_rng(spec.seed)
    U = _seeded_orthonormal(rng, spec.p, spec.rank)
    weights = rng.standard_normal((spec.rank, spec.n))
    noise = rng.standard_normal((spec.p, spec.n))
    X = U @ (np.sqrt(np.asarray(spec.spikes))[:, None] * weights) + spec.sigma * noise
    return Dataset(matrix=X, source=f"spiked(r={spec.rank}, sigma={spec.sigma}, seed={spec.seed})")


def spiked_population_covariance(spec: SynthSpec) -> np.ndarray:
    """Population covariance of the spiked model (oracle for tests/reference)."""
    if spec.model != MODEL_SPIKED:
        raise ValueError(f"expected a {MODEL_SPIKED!r} spec, got {spec.model!r}")
    rng = np.random.default_rng(spec.seed)
    U = _seeded_orthonormal(rng, spec.p, spec.rank)
    return (U * np.asarray(spec.spikes)) @ U.T + spec.sigma**2 * np.eye(spec.p)


def stable_rank_spectrum(beta: float, p: int) -> np.ndarray:
    """Two-level covariance spectrum whose stable rank equals beta exactly.

    Top eigenvalue 1, remaining p-1 eigenvalues sqrt((beta-1)/(p-1)), so that
    sum(lam^2)/max(lam)^2 = 1 + (p-1)*(beta-1)/(p-1) = beta.
    """
    if not 1.0 <= beta <= p:
        raise ValueError(f"target stable rank must be in [1, p={p}], got {beta}")
    lams = np.full(p, math.sqrt((beta - 1.0) / (p - 1.0)) if p > 1 else 0.0)
    lams[0] = 1.0
    return lams


def generate_stable_rank(spec: SynthSpec) -> Dataset:
    """Gaussian samples whose population covariance has stable rank beta."""
    if spec.model != MODEL_STABLE_RANK:
        raise ValueError(f"expected a {MODEL_STABLE_RANK!r} spec, got {spec.model!r}")
    rng = np.random.default_rng(spec.seed)
    lams = stable_rank_spectrum(spec.beta, spec.p)
    Q = _seeded_orthonormal(rng, spec.p, spec.p)
    X = (Q * np.sqrt(lams)) @ rng.standard_normal((spec.p, spec.n))
    return Dataset(matrix=X, source=f"stable_rank(beta={spec.beta}, seed={spec.seed})")


def generate(spec: SynthSpec) -> Dataset:
    """Dispatch on the synthetic model."""
    if spec.model == MODEL_SPIKED:
        return generate_spiked(spec)
    return generate_stable_rank(spec)


def save_synth_spec(spec: SynthSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_json_dict(), indent=2) + "\n")


def load_synth_spec(path: str | Path) -> SynthSpec:
    return SynthSpec.from_json_dict(json.loads(Path(path).read_text()))
