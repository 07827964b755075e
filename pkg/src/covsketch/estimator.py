"""Covariance estimation from back-projected sketches.

The raw estimator accumulates outer products of back-projected samples and
rescales once at the end:

    C_hat = 1 / ((m^2 + m) * mu2^2) * (1/n) * sum_i z_i z_i^T,   z_i = R_i R_i^T x_i.

Its expectation carries two closed-form bias terms, a kurtosis-weighted
diagonal inflation and an isotropic trace term:

    E[C_hat] = C + kappa/(m+1) * diag(C) + tr(C)/(m+1) * I.

``debias`` inverts that map exactly using

    alpha1 = (kappa/(m+1)) / (1 + kappa/(m+1))
    alpha2 = 1 / ((1 + kappa/(m+1)) * (m + 1 + kappa + p))

so the corrected estimate  C_hat - alpha1*diag(C_hat) - alpha2*tr(C_hat)*I
is unbiased for the sample covariance of the full data, with no structural
assumptions on that covariance.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.io import mmread, mmwrite

from .projection import ProjectionSpec, generate
from .sketch import ProjectedSample, SketchSet, backproject

KIND_BIASED = "biased"
KIND_UNBIASED = "unbiased"

SIDECAR_VERSION = 1


class SingularCorrectionError(ValueError):
    """The bias-correction coefficients are undefined for these parameters."""


class CovAccumulator:
    """Mergeable running sum of projected outer products.

    Only the upper triangle is written; the mirrored matrix is materialized on
    read. Scaling is deferred to finalize so that merging stays exact.
    """

    def __init__(self, spec: ProjectionSpec):
        self.spec = spec
        self.count = 0
        self._upper = np.zeros((spec.p, spec.p))

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def sum_matrix(self) -> np.ndarray:
        """Full symmetric sum of z z^T accumulated so far."""
        return self._upper + np.triu(self._upper, 1).T

    def accumulate(self, z: ProjectedSample) -> "CovAccumulator":
        """Add one rank-1 update z z^T, touching only nonzero index pairs."""
        if z.p != self.p:
            raise ValueError(f"projected sample has length {z.p}, accumulator expects {self.p}")
        if z.nnz <= self.p // 2:
            if z.nnz:
                outer = np.outer(z.values, z.values)
                self._upper[np.ix_(z.indices, z.indices)] += np.triu(outer)
        else:
            dense = z.to_dense()
            self._upper += np.triu(np.outer(dense, dense))
        self.count += 1
        return self

    def merge(self, other: "CovAccumulator") -> "CovAccumulator":
        if other.spec != self.spec:
            raise ValueError("cannot merge accumulators built from different specs")
        self._upper += other._upper
        self.count += other.count
        return self


@dataclass
class CovEstimate:
    """Symmetric p x p covariance estimate with its provenance parameters."""

    matrix: np.ndarray
    kind: str
    m: int
    n: int
    family: str
    s: float | None
    kappa: float
    gamma: float | None
    mu2: float
    alpha1: float | None = None
    alpha2: float | None = None
    wall_time_seconds: float = 0.0

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def params_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "m": self.m,
            "n": self.n,
            "family": self.family,
            "s": self.s,
            "kappa": self.kappa,
            "gamma": self.gamma,
            "mu2": self.mu2,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "wall_time_seconds": self.wall_time_seconds,
        }

    def save(self, matrix_path: str | Path, sidecar_path: str | Path | None = None) -> None:
        """Write Matrix Market (symmetric array) plus a JSON params sidecar."""
        matrix_path = Path(matrix_path)
        if sidecar_path is None:
            sidecar_path = matrix_path.with_suffix(".json")
        mmwrite(str(matrix_path), self.matrix, symmetry="symmetric", precision=17)
        payload = {"version": SIDECAR_VERSION, **self.params_dict()}
        Path(sidecar_path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, matrix_path: str | Path, sidecar_path: str | Path | None = None) -> "CovEstimate":
        matrix_path = Path(matrix_path)
        if sidecar_path is None:
            sidecar_path = matrix_path.with_suffix(".json")
        meta = json.loads(Path(sidecar_path).read_text())
        matrix = np.asarray(mmread(str(matrix_path)), dtype=np.float64)
        return cls(
            matrix=matrix,
            kind=meta["kind"],
            m=meta["m"],
            n=meta["n"],
            family=meta["family"],
            s=meta["s"],
            kappa=meta["kappa"],
            gamma=meta["gamma"],
            mu2=meta["mu2"],
            alpha1=meta.get("alpha1"),
            alpha2=meta.get("alpha2"),
            wall_time_seconds=meta.get("wall_time_seconds", 0.0),
        )


def finalize_biased(acc: CovAccumulator) -> CovEstimate:
    """Scale the accumulated sum into the raw (biased) estimate."""
    if acc.count == 0:
        raise ValueError("cannot finalize an accumulator with zero samples")
    spec = acc.spec
    mu2 = spec.dist.mu2
    scale = acc.count * (spec.m**2 + spec.m) * mu2**2
    return CovEstimate(
        matrix=acc.sum_matrix / scale,
        kind=KIND_BIASED,
        m=spec.m,
        n=acc.count,
        family=spec.dist.family,
        s=spec.dist.s,
        kappa=spec.dist.kappa,
        gamma=spec.gamma,
        mu2=mu2,
    )


def bias_coefficients(kappa: float, m: int, p: int) -> tuple[float, float]:
    """Closed-form correction coefficients (alpha1, alpha2)."""
    ratio = 1.0 + kappa / (m + 1.0)
    tail = m + 1.0 + kappa + p
    if ratio == 0.0 or tail == 0.0:
        raise SingularCorrectionError(
            f"bias correction undefined at kappa={kappa}, m={m}, p={p}: "
            f"1 + kappa/(m+1) = {ratio}, m+1+kappa+p = {tail}; for the sparse "
            "sign family this happens only at s=1 with m=1"
        )
    alpha1 = (kappa / (m + 1.0)) / ratio
    alpha2 = 1.0 / (ratio * tail)
    return alpha1, alpha2


def debias(
    est: CovEstimate,
    kappa: float | None = None,
    m: int | None = None,
    p: int | None = None,
) -> CovEstimate:
    """Remove the diagonal and trace bias terms from a biased estimate.

    Parameters default to the estimate's own provenance; overrides exist so
    the correction can be studied under mismatched assumptions.
    """
    if est.kind != KIND_BIASED:
        raise ValueError(f"debias expects a biased estimate, got kind={est.kind!r}")
    kappa = est.kappa if kappa is None else kappa
    m = est.m if m is None else m
    p = est.p if p is None else p
    alpha1, alpha2 = bias_coefficients(kappa, m, p)
    M = est.matrix
    corrected = M - alpha1 * np.diag(np.diag(M)) - alpha2 * np.trace(M) * np.eye(p)
    return replace(est, matrix=corrected, kind=KIND_UNBIASED, alpha1=alpha1, alpha2=alpha2)


def estimate(sketches: SketchSet, kind: str = KIND_UNBIASED) -> CovEstimate:
    """Full pipeline: regenerate each R_i, back-project, accumulate, rescale.

    Records the wall time of the whole construction on the returned estimate.
    """
    if kind not in (KIND_BIASED, KIND_UNBIASED):
        raise ValueError(f"kind must be {KIND_BIASED!r} or {KIND_UNBIASED!r}, got {kind!r}")
    start = time.perf_counter()
    spec = sketches.spec
    acc = CovAccumulator(spec)
    for i in range(sketches.n):
        R = generate(spec, i)
        acc.accumulate(backproject(R, sketches.measurements[i]))
    est = finalize_biased(acc)
    if kind == KIND_UNBIASED:
        est = debias(est)
    est.wall_time_seconds = time.perf_counter() - start
    return est
