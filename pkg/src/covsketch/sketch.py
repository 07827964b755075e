"""Compressive measurements y = R^T x and sparse back-projections z = R y.

All kernels touch only the stored nonzeros of the projection matrix, so the
per-sample cost scales with nnz(R) instead of p*m. Back-projected samples are
kept sparse; their support is the union of the supports of R's columns, which
is what makes the downstream covariance accumulation cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .projection import ProjectionSpec, SparseProjection, generate

SKETCH_FORMAT_VERSION = 1


class CorruptSketchError(ValueError):
    """Sketch file payload does not match its header; carries the byte offset."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


@dataclass
class ProjectedSample:
    """Sparse back-projected sample z = R y of length p."""

    p: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return self.indices.size

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.p)
        dense[self.indices] = self.values
        return dense

    @classmethod
    def from_dense(cls, z: np.ndarray) -> "ProjectedSample":
        z = np.asarray(z, dtype=np.float64)
        idx = np.flatnonzero(z)
        return cls(p=z.size, indices=idx.astype(np.int64), values=z[idx])


@dataclass
class SketchSet:
    """n compressive measurements plus the spec that regenerates every R_i."""

    spec: ProjectionSpec
    measurements: np.ndarray  # shape (n, m), float64

    def __post_init__(self) -> None:
        self.measurements = np.ascontiguousarray(self.measurements, dtype=np.float64)
        if self.measurements.ndim != 2 or self.measurements.shape[1] != self.spec.m:
            raise ValueError(
                f"measurements must have shape (n, {self.spec.m}), "
                f"got {self.measurements.shape}"
            )
        if self.n < 1:
            raise ValueError("a sketch set needs at least one measurement")

    @property
    def n(self) -> int:
        return self.measurements.shape[0]


def _as_sample(x: np.ndarray, p: int) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (p,):
        raise ValueError(f"sample has shape {x.shape}, expected ({p},)")
    return x.astype(np.float64, copy=False)


def measure(R: SparseProjection | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Compressive measurement y = R^T x, touching only stored nonzeros."""
    if isinstance(R, np.ndarray):
        x = _as_sample(x, R.shape[0])
        return R.T @ x
    x = _as_sample(x, R.p)
    contrib = R.values * x[R.rows]
    return np.bincount(R.col_ids, weights=contrib, minlength=R.m)


def backproject(R: SparseProjection | np.ndarray, y: np.ndarray) -> ProjectedSample:
    """Back-projection z = R y as a sparse vector; overlapping columns sum."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(R, np.ndarray):
        if y.shape != (R.shape[1],):
            raise ValueError(f"measurement has shape {y.shape}, expected ({R.shape[1]},)")
        return ProjectedSample.from_dense(R @ y)
    if y.shape != (R.m,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({R.m},)")
    if R.nnz == 0:
        return ProjectedSample(p=R.p, indices=np.empty(0, np.int64), values=np.empty(0))
    contrib = R.values * y[R.col_ids]
    uniq, inverse = np.unique(R.rows, return_inverse=True)
    sums = np.bincount(inverse, weights=contrib, minlength=uniq.size)
    keep = sums != 0.0
    return ProjectedSample(p=R.p, indices=uniq[keep], values=sums[keep])


def sketch_dataset(spec: ProjectionSpec, samples: Iterable[np.ndarray]) -> SketchSet:
    """Single pass over the data source: measurements[i] = R_i^T x_i.

    The projection is keyed by the sample index, not arrival order, so any
    partitioning of the source that preserves indices yields the same sketch.
    """
    out = []
    for i, x in enumerate(samples):
        x = np.asarray(x)
        if x.shape != (spec.p,):
            raise ValueError(
                f"sample {i} has shape {x.shape}, expected ({spec.p},)"
            )
        out.append(measure(generate(spec, i), x))
    if not out:
        raise ValueError("data source yielded no samples")
    return SketchSet(spec=spec, measurements=np.asarray(out))


def write_sketch_file(path: str | Path, sketches: SketchSet) -> None:
    """One JSON header line, then n records of m little-endian float64 values."""
    header = {
        "version": SKETCH_FORMAT_VERSION,
        "spec": sketches.spec.to_json_dict(),
        "n": sketches.n,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(sketches.measurements, dtype="<f8").tobytes())


def read_sketch_file(path: str | Path) -> SketchSet:
    """Inverse of :func:`write_sketch_file`; round-trips bit-exactly."""
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CorruptSketchError("no header line found", byte_offset=len(blob))
    try:
        header = json.loads(blob[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptSketchError(f"unreadable header: {exc}", byte_offset=0) from exc
    if header.get("version") != SKETCH_FORMAT_VERSION:
        raise CorruptSketchError(
            f"unsupported sketch format version {header.get('version')}", byte_offset=0
        )
    spec = ProjectionSpec.from_json_dict(header["spec"])
    n = int(header["n"])
    body = blob[newline + 1:]
    expected = n * spec.m * 8
    if len(body) != expected:
        raise CorruptSketchError(
            f"payload holds {len(body)} bytes, header promises {expected}",
            byte_offset=newline + 1 + min(len(body), expected),
        )
    data = np.frombuffer(body, dtype="<f8").reshape(n, spec.m)
    return SketchSet(spec=spec, measurements=data.astype(np.float64))
