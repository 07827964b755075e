"""Command-line driver: sketch, estimate, sweep, eigvec, verify, synth.

Exit codes: 0 success, 2 usage or validation failure, 3 corrupt data file,
4 verification failure. Every command is deterministic given --seed; sweep
reports record the master seed of each trial.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import mmread

from .estimator import (
    KIND_BIASED,
    KIND_UNBIASED,
    CovAccumulator,
    debias,
    estimate,
    finalize_biased,
)
from .ingest import (
    MODEL_SPIKED,
    MODEL_STABLE_RANK,
    Dataset,
    SynthSpec,
    generate as generate_synth,
    load_csv,
    load_matrix_market,
    save_matrix_market,
    save_synth_spec,
)
from .metrics import eigenvector_to_pgm, save_eigenvectors_csv, spectral_norm, stable_rank, top_eigenvectors
from .oracle import default_verification_grid, save_verification_report
from .projection import DistributionSpec, ProjectionSpec, generate
from .sketch import CorruptSketchError, backproject, read_sketch_file, sketch_dataset, write_sketch_file

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CORRUPT = 3
EXIT_VERIFY = 4

REPORT_VERSION = 1
DEFAULT_M_RATIO = 0.4
MIN_VERIFY_TRIALS = 10**4


# ---------------------------------------------------------------------------
# sweep engine


@dataclass
class SweepConfig:
    """One experiment sweep: error and timing versus compression factor."""

    dataset: Dataset
    m: int
    gammas: list[float]
    trials: int
    seed: int
    kinds: tuple[str, ...] = (KIND_BIASED, KIND_UNBIASED)
    jobs: int = 1
    cache_base: Path | None = None  # prefix for the reference-covariance cache file

    def __post_init__(self) -> None:
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ValueError("gammas must be a nonempty list of positive values")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = set(self.kinds) - {KIND_BIASED, KIND_UNBIASED}
        if bad or not self.kinds:
            raise ValueError(f"kinds must be a nonempty subset of (biased, unbiased), got {self.kinds}")
        if not 1 <= self.m < self.dataset.p:
            raise ValueError(f"m must satisfy 1 <= m < p, got m={self.m}, p={self.dataset.p}")


def trial_master_seed(seed: int, gamma_index: int, trial: int) -> int:
    """Documented derivation of per-trial master seeds from the sweep seed."""
    ss = np.random.SeedSequence([seed, gamma_index, trial])
    return int(ss.generate_state(1, np.uint64)[0])


def _run_trial(
    X: np.ndarray,
    cov: np.ndarray,
    ref_norm: float,
    m: int,
    kinds: tuple[str, ...],
    s: float,
    master_seed: int,
) -> dict:
    """Sketch once, estimate the requested kinds, return errors and timings."""
    p, n = X.shape
    spec = ProjectionSpec(DistributionSpec.sparse_sign(s), p, m, master_seed)
    sketches = sketch_dataset(spec, (X[:, i] for i in range(n)))

    start = time.perf_counter()
    acc = CovAccumulator(spec)
    for i in range(sketches.n):
        acc.accumulate(backproject(generate(spec, i), sketches.measurements[i]))
    biased = finalize_biased(acc)
    seconds_biased = time.perf_counter() - start
    unbiased = None
    seconds_unbiased = 0.0
    if KIND_UNBIASED in kinds:
        unbiased = debias(biased)
        seconds_unbiased = time.perf_counter() - start

    out = {}
    if KIND_BIASED in kinds:
        out[KIND_BIASED] = {
            "error": float(spectral_norm(biased.matrix - cov) / ref_norm),
            "seconds": seconds_biased,
        }
    if unbiased is not None:
        out[KIND_UNBIASED] = {
            "error": float(spectral_norm(unbiased.matrix - cov) / ref_norm),
            "seconds": seconds_unbiased,
        }
    return out


_WORKER_CTX: dict = {}


def _sweep_worker_init(X, cov, ref_norm, m, kinds) -> None:
    _WORKER_CTX["args"] = (X, cov, ref_norm, m, kinds)


def _sweep_worker_task(task: tuple) -> tuple:
    gamma_index, trial, s, master_seed = task
    X, cov, ref_norm, m, kinds = _WORKER_CTX["args"]
    try:
        return gamma_index, trial, _run_trial(X, cov, ref_norm, m, kinds, s, master_seed), None
    except Exception as exc:  # per-cell failures are recorded, the run continues
        return gamma_index, trial, None, f"{type(exc).__name__}: {exc}"


def _reference_covariance(X: np.ndarray, cache_base: Path | None) -> tuple[np.ndarray, float, bool]:
    """Exact C_n plus its measured build time, with an optional disk cache.

    The cache stores both the matrix and the build time measured when it was
    created, so a hit skips the (possibly dominant) dense build entirely.
    """
    digest = hashlib.sha256(X.tobytes() + str(X.shape).encode()).hexdigest()[:12]
    cache_path = None
    if cache_base is not None:
        cache_path = cache_base.parent / (cache_base.name + f".cn-{digest}.npz")
        if cache_path.exists():
            try:
                blob = np.load(cache_path)
                return blob["cov"], float(blob["build_seconds"]), True
            except Exception:
                pass  # unreadable cache: fall through and rebuild
    n = X.shape[1]
    _ = X @ X.T / n  # warm-up
    start = time.perf_counter()
    cov = X @ X.T / n
    build_seconds = time.perf_counter() - start
    if cache_path is not None:
        try:
            np.savez(cache_path, cov=cov, build_seconds=build_seconds)
        except OSError:
            pass  # cache directory not writable; keep going
    return cov, build_seconds, False


def run_sweep(config: SweepConfig) -> dict:
    """Execute the sweep and return the report as a JSON-ready dict."""
    X = config.dataset.matrix
    cov, ref_seconds, from_cache = _reference_covariance(X, config.cache_base)
    ref_norm = spectral_norm(cov)
    srank = stable_rank(cov)

    tasks = []
    gamma_info = []
    for gi, gamma in enumerate(config.gammas):
        s = config.m / gamma
        gamma_info.append((gamma, s))
        for t in range(config.trials):
            tasks.append((gi, t, s, trial_master_seed(config.seed, gi, t)))

    # One discarded warm-up trial so first-trial timings are not inflated.
    results: dict[tuple[int, int], dict] = {}
    failures: dict[int, list[dict]] = {gi: [] for gi in range(len(config.gammas))}
    try:
        warm_s = gamma_info[0][1]
        if warm_s >= 1.0:
            _run_trial(X, cov, ref_norm, config.m, config.kinds, warm_s,
                       trial_master_seed(config.seed, 0, 0))
    except Exception:
        pass

    if config.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=config.jobs,
            initializer=_sweep_worker_init,
            initargs=(X, cov, ref_norm, config.m, config.kinds),
        ) as pool:
            for gi, t, res, err in pool.map(_sweep_worker_task, tasks, chunksize=4):
                if err is None:
                    results[(gi, t)] = res
                else:
                    failures[gi].append({"trial": t, "error": err})
    else:
        for gi, t, s, master in tasks:
            try:
                results[(gi, t)] = _run_trial(X, cov, ref_norm, config.m, config.kinds, s, master)
            except Exception as exc:
                failures[gi].append({"trial": t, "error": f"{type(exc).__name__}: {exc}"})

    cells = []
    for gi, (gamma, s) in enumerate(gamma_info):
        seeds = [trial_master_seed(config.seed, gi, t) for t in range(config.trials)]
        for kind in config.kinds:
            errors = []
            seconds = []
            for t in range(config.trials):
                res = results.get((gi, t))
                if res is not None:
                    errors.append(res[kind]["error"])
                    seconds.append(res[kind]["seconds"])
            mean_err = float(np.mean(errors)) if errors else None
            std_err = float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0
            mean_sec = float(np.mean(seconds)) if seconds else None
            cells.append({
                "gamma": gamma,
                "kind": kind,
                "s": s,
                "trials": config.trials,
                "completed": len(errors),
                "mean_error": mean_err,
                "std_error": std_err,
                "mean_seconds": mean_sec,
                "mean_normalized_time": (mean_sec / ref_seconds) if mean_sec is not None else None,
                "seeds": seeds,
                "failures": failures[gi],
            })

    return {
        "version": REPORT_VERSION,
        "dataset": {"source": config.dataset.source, "p": config.dataset.p, "n": config.dataset.n},
        "m": config.m,
        "seed": config.seed,
        "kinds": list(config.kinds),
        "stable_rank": srank,
        "reference_spectral_norm": ref_norm,
        "reference_build_seconds": ref_seconds,
        "reference_from_cache": from_cache,
        "cells": cells,
        "created_unix": time.time(),
    }


def write_sweep_csv(report: dict, path: str | Path) -> None:
    fields = ["gamma", "kind", "s", "trials", "completed",
              "mean_error", "std_error", "mean_normalized_time"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for cell in report["cells"]:
            writer.writerow(cell)


# ---------------------------------------------------------------------------
# shared CLI helpers


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _load_dataset(args) -> Dataset:
    path = Path(args.input)
    fmt = args.format
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "mtx"
    if fmt == "csv":
        samples_as = "columns" if args.samples_columns else "rows"
        ds = load_csv(path, samples_as=samples_as)
    else:
        samples_as = "rows" if args.samples_rows else "columns"
        ds = load_matrix_market(path, samples_as=samples_as)
    _say(args, f"loaded {path}: p={ds.p} (dimension), n={ds.n} (samples)")
    return ds


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"could not parse comma-separated numbers from {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def _cmd_sketch(args) -> int:
    dataset = _load_dataset(args)
    if args.family == "gaussian":
        dist = DistributionSpec.gaussian()
    else:
        if args.s is None:
            raise ValueError("--s is required for the sparse family")
        dist = DistributionSpec.sparse_sign(args.s)
    spec = ProjectionSpec(dist=dist, p=dataset.p, m=args.m, master_seed=args.seed)
    sketches = sketch_dataset(spec, dataset.samples())
    write_sketch_file(args.out, sketches)
    _say(args, f"wrote {sketches.n} measurements of dimension {spec.m} to {args.out}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    sketches = read_sketch_file(args.sketch)
    kind = KIND_BIASED if args.biased else KIND_UNBIASED
    est = estimate(sketches, kind=kind)
    out = Path(args.out)
    est.save(out)
    _say(args, f"wrote {kind} estimate (p={est.p}, n={est.n}) to {out} "
               f"with sidecar {out.with_suffix('.json')}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    dataset = _load_dataset(args)
    if args.m is not None:
        m = args.m
    else:
        m = max(1, round(args.m_ratio * dataset.p))
    kinds = {
        "both": (KIND_BIASED, KIND_UNBIASED),
        "biased": (KIND_BIASED,),
        "unbiased": (KIND_UNBIASED,),
    }[args.kinds]
    cache_base = None
    if not args.no_cache:
        inp = Path(args.input)
        cache_base = inp.parent / inp.stem
    config = SweepConfig(
        dataset=dataset,
        m=m,
        gammas=_parse_floats(args.gammas),
        trials=args.trials,
        seed=args.seed,
        kinds=kinds,
        jobs=args.jobs,
        cache_base=cache_base,
    )
    report = run_sweep(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    json_path = out.parent / (out.name + ".json")
    csv_path = out.parent / (out.name + ".csv")
    json_path.write_text(json.dumps(report, indent=2) + "\n")
    write_sweep_csv(report, csv_path)
    written = [json_path, csv_path]
    if not args.no_plots:
        from .plots import render_sweep_figures

        written += render_sweep_figures(report, out)
    _say(args, "wrote " + ", ".join(str(w) for w in written))
    for cell in report["cells"]:
        _say(args, f"  gamma={cell['gamma']:<6g} {cell['kind']:<9s} "
                   f"mean_error={cell['mean_error']:.6g} "
                   f"norm_time={cell['mean_normalized_time']:.4g}")
    return EXIT_OK


def _cmd_eigvec(args) -> int:
    C = np.asarray(mmread(args.cov), dtype=np.float64)
    summary = top_eigenvectors(C, args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.parent / (out.name + ".csv")
    save_eigenvectors_csv(summary, csv_path)
    written = [csv_path]
    if args.pgm is not None:
        try:
            w_str, h_str = args.pgm.lower().split("x")
            width, height = int(w_str), int(h_str)
        except ValueError:
            raise ValueError(f"--pgm expects WIDTHxHEIGHT, got {args.pgm!r}") from None
        for i in range(args.k):
            pgm_path = out.parent / (out.name + f"_v{i + 1}.pgm")
            eigenvector_to_pgm(summary.eigenvectors[:, i], width, height, pgm_path)
            written.append(pgm_path)
    _say(args, "eigenvalues: " + ", ".join(f"{v:.6g}" for v in summary.eigenvalues))
    _say(args, "wrote " + ", ".join(str(w) for w in written))
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.trials < MIN_VERIFY_TRIALS:
        raise ValueError(f"--trials must be at least {MIN_VERIFY_TRIALS}, got {args.trials}")
    reports, summary = default_verification_grid(trials=args.trials, seed=args.seed, jobs=args.jobs)
    width = len(str(len(reports)))
    for i, rep in enumerate(reports, start=1):
        status = "PASS" if rep.passed else "FAIL"
        det = rep.details
        params = f"family={det.get('family')} s={det.get('s')} p={det.get('p')} m={det.get('m')}"
        print(f"[{i:>{width}}/{len(reports)}] {status} {rep.target:<26s} {params} "
              f"trials={rep.trials} maxdev={rep.max_abs_deviation:.3e} "
              f"allowed={rep.max_allowed:.3e} seed={rep.seed}")
    print(f"family-wise false-failure bound: "
          f"{summary['family_wise_false_failure_bound']:.4%} "
          f"({summary['total_entries']} entries at {summary['band_sigmas']:.0f} standard errors)")
    if args.report is not None:
        save_verification_report(reports, summary, args.report)
        _say(args, f"wrote {args.report}")
    if not summary["all_passed"]:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.model == "spiked":
        if args.spikes is None:
            raise ValueError("--spikes is required for the spiked model")
        spikes = tuple(_parse_floats(args.spikes))
        spec = SynthSpec(
            model=MODEL_SPIKED, p=args.p, n=args.n, seed=args.seed,
            rank=len(spikes), spikes=spikes, sigma=args.sigma,
        )
    else:
        if args.beta is None:
            raise ValueError("--beta is required for the stable-rank model")
        spec = SynthSpec(model=MODEL_STABLE_RANK, p=args.p, n=args.n, seed=args.seed, beta=args.beta)
    dataset = generate_synth(spec)
    save_matrix_market(dataset, args.out)
    if args.spec_out is not None:
        save_synth_spec(spec, args.spec_out)
        _say(args, f"wrote spec to {args.spec_out}")
    _say(args, f"wrote synthetic dataset p={dataset.p}, n={dataset.n} to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    common.add_argument("--quiet", action="store_true", help="suppress informational output")

    parser = argparse.ArgumentParser(
        prog="covsketch",
        description="Sample covariance estimation from sparse random projections.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    input_common = argparse.ArgumentParser(add_help=False)
    input_common.add_argument("--input", required=True, help="dataset file (.mtx or .csv)")
    input_common.add_argument("--format", choices=["auto", "mtx", "csv"], default="auto")
    input_common.add_argument("--samples-rows", action="store_true",
                              help="treat Matrix Market rows as samples")
    input_common.add_argument("--samples-columns", action="store_true",
                              help="treat CSV columns as samples")

    p_sketch = sub.add_parser("sketch", parents=[common, input_common],
                              help="compress a dataset into an m-dimensional sketch file")
    p_sketch.add_argument("--m", type=int, required=True, help="measurement dimension (m < p)")
    p_sketch.add_argument("--s", type=float, default=None, help="sparsity parameter s >= 1")
    p_sketch.add_argument("--family", choices=["sparse", "gaussian"], default="sparse")
    p_sketch.add_argument("--out", required=True, help="output sketch file")
    p_sketch.set_defaults(func=_cmd_sketch)

    p_est = sub.add_parser("estimate", parents=[common],
                           help="estimate the covariance matrix from a sketch file")
    p_est.add_argument("--sketch", required=True, help="input sketch file")
    p_est.add_argument("--out", required=True, help="output Matrix Market file (.mtx)")
    kind_group = p_est.add_mutually_exclusive_group()
    kind_group.add_argument("--unbiased", action="store_true", default=True)
    kind_group.add_argument("--biased", action="store_true", default=False)
    p_est.set_defaults(func=_cmd_estimate)

    p_sweep = sub.add_parser("sweep", parents=[common, input_common],
                             help="error/timing sweep over compression factors")
    m_group = p_sweep.add_mutually_exclusive_group()
    m_group.add_argument("--m", type=int, default=None, help="measurement dimension")
    m_group.add_argument("--m-ratio", type=float, default=DEFAULT_M_RATIO,
                         help=f"m as a fraction of p (default {DEFAULT_M_RATIO})")
    p_sweep.add_argument("--gammas", default="0.1,0.3,0.5",
                         help="comma-separated compression factors (default 0.1,0.3,0.5)")
    p_sweep.add_argument("--trials", type=int, default=10, help="trials per gamma (default 10)")
    p_sweep.add_argument("--kinds", choices=["both", "biased", "unbiased"], default="both")
    p_sweep.add_argument("--out", required=True, help="output prefix for .json/.csv/figures")
    p_sweep.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p_sweep.add_argument("--no-cache", action="store_true",
                         help="do not cache the reference covariance next to the dataset")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_eig = sub.add_parser("eigvec", parents=[common],
                           help="export leading eigenvectors of a covariance file")
    p_eig.add_argument("--cov", required=True, help="covariance Matrix Market file")
    p_eig.add_argument("--k", type=int, default=1, help="number of eigenvectors (default 1)")
    p_eig.add_argument("--out", required=True, help="output prefix for .csv/.pgm files")
    p_eig.add_argument("--pgm", default=None, metavar="WxH",
                       help="also render each eigenvector as a WxH PGM image")
    p_eig.set_defaults(func=_cmd_eigvec)

    p_verify = sub.add_parser("verify", parents=[common],
                              help="Monte Carlo verification of the expectation identities")
    p_verify.add_argument("--trials", type=int, default=100_000,
                          help=f"Monte Carlo trials per check (min {MIN_VERIFY_TRIALS})")
    p_verify.add_argument("--report", default=None, help="write the JSON report here")
    p_verify.set_defaults(func=_cmd_verify)

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate a synthetic dataset")
    p_synth.add_argument("--model", choices=["spiked", "stable-rank"], required=True)
    p_synth.add_argument("--p", type=int, required=True, help="ambient dimension")
    p_synth.add_argument("--n", type=int, required=True, help="number of samples")
    p_synth.add_argument("--spikes", default=None, help="comma-separated spike strengths")
    p_synth.add_argument("--sigma", type=float, default=0.0, help="noise level (spiked model)")
    p_synth.add_argument("--beta", type=float, default=None, help="target stable rank")
    p_synth.add_argument("--out", required=True, help="output Matrix Market file")
    p_synth.add_argument("--spec-out", default=None, help="also write the spec as JSON")
    p_synth.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CorruptSketchError as exc:
        print(f"error: corrupt sketch file: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
