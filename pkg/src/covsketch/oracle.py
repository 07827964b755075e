"""Independent verification of the estimator's expectation identities.

The closed forms below are literal transcriptions of the moment matrices of
R R^T columns and of the single-sample and full-estimator expectations. They
deliberately share no code with the estimator module, and the Monte Carlo
samplers here draw dense projection matrices entry by entry (with numpy's
default PCG64 stream, not the production Philox stream), so agreement between
the two routes is evidence rather than tautology.

The one exception is ``full_estimator_expectation_check``, whose whole point is to push the
*production* sketch/backproject/accumulate pipeline through many independent
master seeds and compare the empirical mean against the closed-form
expectation.

Pass bands are four per-entry standard errors. Each report carries the seed
and the raw worst deviation so a flaky run can be reproduced exactly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import CovAccumulator, debias, estimate, finalize_biased
from .projection import GAUSSIAN, SPARSE_SIGN, DistributionSpec, ProjectionSpec
from .sketch import sketch_dataset

TARGET_EKK = "Ekk"
TARGET_EKL = "Ekl"
TARGET_SINGLE_SAMPLE = "SingleSampleExpectation"
TARGET_FULL_ESTIMATOR = "FullEstimatorExpectation"

BAND_SIGMAS = 4.0
# Two-sided Gaussian tail mass beyond BAND_SIGMAS standard errors.
PER_ENTRY_ALPHA = math.erfc(BAND_SIGMAS / math.sqrt(2.0))

_PIPELINE_SHARD_SIZE = 2500
_MC_CHUNK = 20000


@dataclass
class MomentCheckReport:
    """Outcome of one Monte Carlo vs closed-form comparison."""

    target: str
    trials: int
    max_abs_deviation: float
    max_allowed: float
    passed: bool
    seed: int
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "target": self.target,
            "trials": self.trials,
            "max_abs_deviation": self.max_abs_deviation,
            "max_allowed": self.max_allowed,
            "passed": self.passed,
            "seed": self.seed,
            "details": self.details,
        }


def closed_form_Ekk(dist: DistributionSpec, m: int, p: int, k: int) -> np.ndarray:
    """E[c_k c_k^T] for the k-th column c_k of R R^T."""
    if not 0 <= k < p:
        raise ValueError(f"k must be in [0, {p}), got {k}")
    mu2, _, kappa = dist.mu2, dist.mu4, dist.kappa
    E = m * mu2**2 * np.eye(p)
    E[k, k] += m * mu2**2 * (kappa + m + 1.0)
    return E


def closed_form_Ekl(dist: DistributionSpec, m: int, p: int, k: int, l: int) -> np.ndarray:
    """E[c_k c_l^T] for distinct columns k != l of R R^T."""
    if k == l:
        raise ValueError("k == l has its own closed form; use closed_form_Ekk")
    if not (0 <= k < p and 0 <= l < p):
        raise ValueError(f"k and l must be in [0, {p}), got k={k}, l={l}")
    mu2 = dist.mu2
    E = np.zeros((p, p))
    E[k, l] = m**2 * mu2**2
    E[l, k] = m * mu2**2
    return E


def single_sample_closed_form(dist: DistributionSpec, m: int, x: np.ndarray) -> np.ndarray:
    """E[R R^T x x^T R R^T] for a fixed sample x."""
    x = np.asarray(x, dtype=np.float64)
    mu2, kappa = dist.mu2, dist.kappa
    outer = np.outer(x, x)
    return (
        (m**2 + m) * mu2**2 * outer
        + kappa * m * mu2**2 * np.diag(np.diag(outer))
        + m * mu2**2 * np.trace(outer) * np.eye(x.size)
    )


def _draw_projections(
    dist: DistributionSpec, m: int, p: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """count dense (p, m) matrices with i.i.d. entries from the distribution."""
    if dist.family == GAUSSIAN:
        return rng.standard_normal((count, p, m))
    prob = 1.0 / dist.s
    nonzero = rng.random((count, p, m)) < prob
    signs = np.where(rng.random((count, p, m)) < 0.5, -1.0, 1.0)
    return np.where(nonzero, signs, 0.0)


class _EntryStats:
    """Streaming per-entry mean and variance over Monte Carlo chunks."""

    def __init__(self, shape: tuple[int, ...]):
        self.count = 0
        self._sum = np.zeros(shape)
        self._sumsq = np.zeros(shape)

    def add_chunk(self, values: np.ndarray) -> None:
        self.count += values.shape[0]
        self._sum += values.sum(axis=0)
        self._sumsq += (values**2).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self._sum / self.count

    @property
    def std_error(self) -> np.ndarray:
        var = np.maximum(self._sumsq / self.count - self.mean**2, 0.0)
        return np.sqrt(var / self.count)


def _band_report(
    target: str,
    mc_mean: np.ndarray,
    std_error: np.ndarray,
    closed: np.ndarray,
    trials: int,
    seed: int,
    details: dict,
) -> MomentCheckReport:
    dev = np.abs(mc_mean - closed)
    band = BAND_SIGMAS * std_error
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(band > 0, dev / band, np.where(dev > 0, np.inf, 0.0))
    worst = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    passed = bool(np.all(dev <= band))
    details = dict(details)
    details["worst_entry"] = [int(i) for i in worst]
    details["entries"] = int(dev.size)
    return MomentCheckReport(
        target=target,
        trials=trials,
        max_abs_deviation=float(dev[worst]),
        max_allowed=float(band[worst]),
        passed=passed,
        seed=seed,
        details=details,
    )


def monte_carlo_Ekl(
    dist: DistributionSpec, m: int, p: int, k: int, l: int, trials: int, seed: int
) -> np.ndarray:
    """Empirical mean of c_k c_l^T over fresh dense draws of R (k == l allowed)."""
    if trials < 10**4:
        raise ValueError(f"need at least 1e4 trials, got {trials}")
    rng = np.random.default_rng(seed)
    stats = _EntryStats((p, p))
    remaining = trials
    while remaining > 0:
        count = min(_MC_CHUNK, remaining)
        R = _draw_projections(dist, m, p, count, rng)
        c_k = np.einsum("tpm,tm->tp", R, R[:, k, :])
        c_l = c_k if l == k else np.einsum("tpm,tm->tp", R, R[:, l, :])
        stats.add_chunk(c_k[:, :, None] * c_l[:, None, :])
        remaining -= count
    return stats.mean


def moment_matrix_check(
    dist: DistributionSpec, m: int, p: int, k: int, l: int, trials: int, seed: int
) -> MomentCheckReport:
    """Monte Carlo E[c_k c_l^T] against the closed form, 4 SE per entry."""
    if trials < 10**4:
        raise ValueError(f"need at least 1e4 trials, got {trials}")
    rng = np.random.default_rng(seed)
    stats = _EntryStats((p, p))
    remaining = trials
    while remaining > 0:
        count = min(_MC_CHUNK, remaining)
        R = _draw_projections(dist, m, p, count, rng)
        c_k = np.einsum("tpm,tm->tp", R, R[:, k, :])
        c_l = c_k if l == k else np.einsum("tpm,tm->tp", R, R[:, l, :])
        stats.add_chunk(c_k[:, :, None] * c_l[:, None, :])
        remaining -= count
    closed = closed_form_Ekk(dist, m, p, k) if k == l else closed_form_Ekl(dist, m, p, k, l)
    target = TARGET_EKK if k == l else TARGET_EKL
    details = {"family": dist.family, "s": dist.s, "p": p, "m": m, "k": k, "l": l}
    return _band_report(target, stats.mean, stats.std_error, closed, trials, seed, details)


def single_sample_expectation_check(
    dist: DistributionSpec, m: int, x: np.ndarray, trials: int, seed: int
) -> MomentCheckReport:
    """Monte Carlo E[R R^T x x^T R R^T] against its closed form."""
    if trials < 10**4:
        raise ValueError(f"need at least 1e4 trials, got {trials}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or not np.any(x):
        raise ValueError("x must be a nonzero vector")
    p = x.size
    rng = np.random.default_rng(seed)
    stats = _EntryStats((p, p))
    remaining = trials
    while remaining > 0:
        count = min(_MC_CHUNK, remaining)
        R = _draw_projections(dist, m, p, count, rng)
        w = np.einsum("tpm,p->tm", R, x)
        z = np.einsum("tpm,tm->tp", R, w)
        stats.add_chunk(z[:, :, None] * z[:, None, :])
        remaining -= count
    closed = single_sample_closed_form(dist, m, x)
    details = {"family": dist.family, "s": dist.s, "p": p, "m": m}
    return _band_report(TARGET_SINGLE_SAMPLE, stats.mean, stats.std_error, closed, trials, seed, details)


def _trial_master_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])


def _pipeline_expectation_shard(args: tuple) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """Welford statistics of the production estimator over one shard of trials."""
    dist_json, m, data, seed, start, count = args
    dist = DistributionSpec.from_json_dict(dist_json)
    p, n = data.shape
    mean_b = np.zeros((p, p))
    m2_b = np.zeros((p, p))
    mean_u = np.zeros((p, p))
    done = 0
    for trial in range(start, start + count):
        spec = ProjectionSpec(dist=dist, p=p, m=m, master_seed=_trial_master_seed(seed, trial))
        sketches = sketch_dataset(spec, (data[:, i] for i in range(n)))
        biased = estimate(sketches, kind="biased")
        unbiased = debias(biased)
        done += 1
        delta = biased.matrix - mean_b
        mean_b += delta / done
        m2_b += delta * (biased.matrix - mean_b)
        mean_u += (unbiased.matrix - mean_u) / done
    return done, mean_b, m2_b, mean_u


def _merge_moments(
    na: int, mean_a: np.ndarray, m2_a: np.ndarray,
    nb: int, mean_b: np.ndarray, m2_b: np.ndarray,
) -> tuple[int, np.ndarray, np.ndarray]:
    """Parallel combination of per-entry (count, mean, M2) statistics."""
    n = na + nb
    delta = mean_b - mean_a
    mean = mean_a + delta * (nb / n)
    m2 = m2_a + m2_b + delta**2 * (na * nb / n)
    return n, mean, m2


def full_estimator_expectation_check(
    dist: DistributionSpec,
    m: int,
    data: np.ndarray,
    trials: int,
    seed: int,
    jobs: int = 1,
) -> MomentCheckReport:
    """Mean of the full production estimator vs the closed-form expectation.

    Runs the complete sketch -> backproject -> accumulate -> rescale pipeline
    once per independent master seed, then compares the empirical mean of the
    biased estimate entrywise against C + kappa/(m+1) diag(C) + tr(C)/(m+1) I.
    The report's details also carry the relative spectral error of the mean
    *unbiased* estimate against C itself.
    """
    if trials < 10**3:
        raise ValueError(f"need at least 1e3 trials, got {trials}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("data must be a (p, n) matrix with samples as columns")
    p, n = data.shape

    shards = []
    start = 0
    while start < trials:
        count = min(_PIPELINE_SHARD_SIZE, trials - start)
        shards.append((dist.to_json_dict(), m, data, seed, start, count))
        start += count

    if jobs > 1 and len(shards) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_pipeline_expectation_shard, shards))
    else:
        results = [_pipeline_expectation_shard(s) for s in shards]

    # Merge in shard order so the result is independent of worker scheduling.
    count, mean_b, m2_b, sum_u = results[0][0], results[0][1], results[0][2], results[0][3] * results[0][0]
    for cnt, mb, m2, mu in results[1:]:
        count, mean_b, m2_b = _merge_moments(count, mean_b, m2_b, cnt, mb, m2)
        sum_u += mu * cnt
    mean_u = sum_u / count

    cov = data @ data.T / n
    expected = cov + (dist.kappa / (m + 1.0)) * np.diag(np.diag(cov)) \
        + (np.trace(cov) / (m + 1.0)) * np.eye(p)
    std_error = np.sqrt(np.maximum(m2_b / count, 0.0) / count)

    from .metrics import spectral_norm  # local import to avoid a cycle at module load

    ref_norm = spectral_norm(cov)
    details = {
        "family": dist.family,
        "s": dist.s,
        "p": p,
        "n": n,
        "m": m,
        "biased_rel_spectral_error": float(spectral_norm(mean_b - cov) / ref_norm),
        "unbiased_rel_spectral_error": float(spectral_norm(mean_u - cov) / ref_norm),
    }
    return _band_report(TARGET_FULL_ESTIMATOR, mean_b, std_error, expected, count, seed, details)


# Default verification grid. Dimension choices keep the documented Bonferroni
# family-wise false-failure bound below 1%: 154 matrix entries in total at a
# per-entry two-sided alpha of erfc(4/sqrt(2)) ~ 6.33e-5.
_DEFAULT_MOMENT_GRID: list[tuple[DistributionSpec, int, int, int, int]] = [
    (DistributionSpec.gaussian(), 4, 5, 1, 1),
    (DistributionSpec.gaussian(), 4, 5, 0, 3),
    (DistributionSpec.sparse_sign(1), 2, 3, 0, 0),
    (DistributionSpec.sparse_sign(1), 2, 3, 1, 2),
    (DistributionSpec.sparse_sign(2), 2, 3, 2, 2),
    (DistributionSpec.sparse_sign(2), 2, 3, 0, 1),
    (DistributionSpec.sparse_sign(3), 2, 3, 1, 1),
    (DistributionSpec.sparse_sign(3), 2, 3, 2, 0),
    (DistributionSpec.sparse_sign(5), 2, 3, 0, 0),
    (DistributionSpec.sparse_sign(5), 2, 3, 0, 2),
]

_DEFAULT_SINGLE_SAMPLE_X = np.array([0.9, -1.7, 0.4, 2.2])

_DEFAULT_PIPELINE_DATA = np.array([
    [0.62, -1.31, 0.27],
    [-0.94, 0.58, 1.46],
    [1.73, 0.81, -0.55],
    [-0.38, -1.12, 0.93],
])


def default_verification_grid(
    trials: int = 100_000, seed: int = 1, jobs: int = 1
) -> tuple[list[MomentCheckReport], dict]:
    """Run the default check grid; returns (reports, accounting summary).

    ``trials`` drives the vectorized moment checks; the full-pipeline
    expectation check uses trials/20 (at least 1000) since each of its trials
    runs the whole estimator.
    """
    if trials < 10**4:
        raise ValueError(f"trials must be at least 1e4, got {trials}")
    reports: list[MomentCheckReport] = []
    for idx, (dist, m, p, k, l) in enumerate(_DEFAULT_MOMENT_GRID):
        check_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1, np.uint64)[0])
        reports.append(moment_matrix_check(dist, m, p, k, l, trials, check_seed))

    ss_seed = int(np.random.SeedSequence([seed, 100]).generate_state(1, np.uint64)[0])
    reports.append(
        single_sample_expectation_check(
            DistributionSpec.sparse_sign(5), 3, _DEFAULT_SINGLE_SAMPLE_X, trials, ss_seed
        )
    )

    pipeline_seed = int(np.random.SeedSequence([seed, 101]).generate_state(1, np.uint64)[0])
    reports.append(
        full_estimator_expectation_check(
            DistributionSpec.sparse_sign(4), 3, _DEFAULT_PIPELINE_DATA,
            trials=max(1000, trials // 20), seed=pipeline_seed, jobs=jobs,
        )
    )

    total_entries = sum(r.details["entries"] for r in reports)
    summary = {
        "checks": len(reports),
        "total_entries": total_entries,
        "band_sigmas": BAND_SIGMAS,
        "per_entry_two_sided_alpha": PER_ENTRY_ALPHA,
        "family_wise_false_failure_bound": total_entries * PER_ENTRY_ALPHA,
        "all_passed": all(r.passed for r in reports),
        "seed": seed,
    }
    return reports, summary


def save_verification_report(
    reports: list[MomentCheckReport], summary: dict, path: str | Path
) -> None:
    payload = {
        "version": 1,
        "summary": summary,
        "reports": [r.to_json_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
