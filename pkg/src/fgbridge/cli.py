"""Command-line front end: ``fgbridge estimate | bench | check``.

Exit codes: 0 success, 1 usage or config error, 2 saturation or
non-convergence (``estimate``) or failed reps (``bench``).
All stored numbers are natural logs; ``--log10`` changes printed values only.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bench import ExperimentSpec, fixed_flow_re2_study, run_repetitions
from .bridge import geometric_from_log_ratios, importance_sampling_bridge, optimal_from_log_ratios
from .config import ConfigError, RunConfig, build_target, emit_config, load_config
from .errors import ModelFormatError, TrainingDivergedError
from .fgb import TrainConfig, fgb_estimate
from .flow import save_flow

LOG10E = 1.0 / math.log(10.0)
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


def _fmt(x) -> str:
    """Six significant digits."""
    if x is None:
        return "nan"
    return f"{float(x):.6g}"


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("FGB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    else:
        cfg.train.seed = cfg.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _show(value, log10):
    return _fmt(value * LOG10E if log10 else value)


def _write_scatter(path, points):
    np.savetxt(path, np.asarray(points)[:, :2], delimiter=",", header="x1,x2", comments="", fmt="%.10g")


def cmd_estimate(args) -> int:
    cfg = _load(args)
    q1, q2 = build_target(cfg.q1), build_target(cfg.q2)
    if q1.dim != q2.dim:
        raise ConfigError(f"q1 has dimension {q1.dim} but q2 has {q2.dim}; augment the smaller one")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    s1, s2 = q1.sample(rng, cfg.n1), q2.sample(rng, cfg.n2)

    record = {"config_hash": cfg.digest(), "seed": cfg.seed, "method": cfg.method}
    started = time.perf_counter()
    if cfg.method == "fgb":
        try:
            result, report, det = fgb_estimate(cfg.train, q1, q2, s1, s2, return_details=True)
        except TrainingDivergedError as exc:
            record.update(error=str(exc), epoch=exc.epoch)
            (out / "result.json").write_text(json.dumps(record, indent=1))
            print(f"training diverged: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        save_flow(det.model, out / "model.npz")
        report.save(out / "train_report.json")
        _write_scatter(out / "omega1.csv", det.est1.points)
        _write_scatter(out / "transformed_omega1.csv", det.transformed_est1)
        _write_scatter(out / "omega2.csv", det.est2.points)
        record.update(
            objective_trace=report.objective_trace,
            r_trace=report.r_trace,
            epochs_run=report.epochs_run,
            training_stopped_by=report.stopped_by,
        )
    else:
        d1 = q1.log_unnorm(s1.points) - q2.log_unnorm(s1.points)
        d2 = q1.log_unnorm(s2.points) - q2.log_unnorm(s2.points)
        if cfg.method == "optimal_identity":
            result = optimal_from_log_ratios(d1, d2, with_re2=True)
        elif cfg.method == "geometric":
            result = geometric_from_log_ratios(d1, d2)
        elif cfg.method == "is":
            result = importance_sampling_bridge("q2_proposal", q1.log_unnorm, q2.log_unnorm, s2)
        else:
            result = importance_sampling_bridge("q1_proposal", q1.log_unnorm, q2.log_unnorm, s1)

    re2 = result.re2_estimate
    record.update(
        log_r_hat=result.log_r_hat,
        re2_estimate=None if re2 is None or not math.isfinite(re2) else re2,
        saturated=bool(result.saturated),
        bridge_converged=bool(result.converged),
        bridge_iterations=result.iterations,
        seconds=time.perf_counter() - started,
    )
    if q1.exact_log_z is not None and q2.exact_log_z is not None:
        record["true_log_r"] = float(q1.exact_log_z - q2.exact_log_z)
    (out / "result.json").write_text(json.dumps(record, indent=1))
    (out / "config.yaml").write_text(emit_config(cfg))

    unit = "log10" if args.log10 else "log"
    print(f"{unit} r_hat = {_show(result.log_r_hat, args.log10)}")
    if re2 is not None:
        print(f"RE^2 estimate = {_fmt(re2)}")
    if "true_log_r" in record:
        print(f"{unit} r (exact) = {_show(record['true_log_r'], args.log10)}")
    if result.saturated:
        print("harmonic divergence estimate saturated; RE^2 is unbounded", file=sys.stderr)
        return EXIT_NUMERIC
    if not result.converged:
        print("bridge iteration did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


SUMMARY_COLUMNS = ["method", "reps", "mc_mse", "mc_mse_se", "mean_re2", "mean_re2_se", "failures", "saturated"]


def cmd_bench(args) -> int:
    cfg = _load(args)
    q1, q2 = build_target(cfg.q1), build_target(cfg.q2)
    if q1.exact_log_z is None or q2.exact_log_z is None:
        raise ConfigError("bench needs targets with known normalizing constants")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_jobs = _threads(args)
    spec = ExperimentSpec(q1, q2, cfg.n1, cfg.n2, cfg.seed, cfg.train)
    rows = []
    for method in cfg.bench_methods:
        summary = run_repetitions(spec, method, cfg.reps, n_jobs=n_jobs)
        rows.append((summary, cfg.reps))
    if cfg.fixed_flow_reps > 0:
        rng = np.random.default_rng(cfg.seed)
        s1, s2 = q1.sample(rng, cfg.n1), q2.sample(rng, cfg.n2)
        result, report, det = fgb_estimate(cfg.train, q1, q2, s1, s2, return_details=True)
        save_flow(det.model, out / "model.npz")
        summary = fixed_flow_re2_study(det.model, q1, q2, cfg.fixed_flow_n_prime, cfg.fixed_flow_reps,
                                       seed=cfg.seed + 1, n_jobs=n_jobs)
        rows.append((summary, cfg.fixed_flow_reps))

    with open(out / "summary.tsv", "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(SUMMARY_COLUMNS)
        for summary, reps in rows:
            r = summary.row()
            writer.writerow([r["method"], reps, _fmt(r["mc_mse"]), _fmt(r["mc_mse_se"]), _fmt(r["mean_re2"]),
                             _fmt(r["mean_re2_se"]), r["failures"], r["saturated"]])
    record = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "true_log_r": spec.true_log_r,
        "note": "standard errors are taken over repetitions",
        "rows": [dict(s.row(), reps=reps, log_r_hats=s.log_r_hats.tolist()) for s, reps in rows],
    }
    (out / "bench.json").write_text(json.dumps(record, indent=1, default=_json_default))
    (out / "config.yaml").write_text(emit_config(cfg))

    print("\t".join(SUMMARY_COLUMNS))
    for summary, reps in rows:
        r = summary.row()
        print("\t".join([r["method"], str(reps), _fmt(r["mc_mse"]), _fmt(r["mc_mse_se"]), _fmt(r["mean_re2"]),
                         _fmt(r["mean_re2_se"]), str(r["failures"]), str(r["saturated"])]))
    return EXIT_OK if all(s.failures == 0 for s, _ in rows) else EXIT_NUMERIC


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    raise TypeError(type(x).__name__)


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(model_path=args.model)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_USAGE


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _config_defaults() -> str:
    """Epilog listing every optional config field with its default."""
    run = RunConfig({}, {}, 0, 0)
    lines = ["config defaults (YAML keys):"]
    for key in ("seed", "method", "output_dir"):
        lines.append(f"  {key}: {getattr(run, key)}")
    lines.append(f"  bench.methods: {run.bench_methods}")
    lines.append(f"  bench.reps: {run.reps}")
    lines.append(f"  bench.fixed_flow.reps: {run.fixed_flow_reps}")
    lines.append(f"  bench.fixed_flow.n_prime: {run.fixed_flow_n_prime}")
    for f in fields(TrainConfig):
        lines.append(f"  train.{f.name}: {getattr(run.train, f.name)}")
    lines.append("required: q1, q2 (target kind and parameters), samples.n1, samples.n2")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    epilog = _config_defaults()
    parser = argparse.ArgumentParser(
        prog="fgbridge",
        description="Bridge sampling estimates of log(Z1/Z2) with an f-GAN trained flow.",
        formatter_class=_HelpFormatter,
        epilog=epilog,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count for repetitions (falls back to FGB_THREADS, then 1)")
        p.add_argument("--out", default=None, metavar="DIR", help="override the config output_dir")
        p.add_argument("--log10", action="store_true", help="print log ratios in base 10")

    p = sub.add_parser("estimate", help="one estimate of log(Z1/Z2) from a config",
                       formatter_class=_HelpFormatter, epilog=epilog)
    common(p)
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("bench", help="repeated-run benchmark from a config",
                       formatter_class=_HelpFormatter, epilog=epilog)
    common(p)
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("check", help="fast invariant suite",
                       formatter_class=_HelpFormatter, epilog=epilog)
    common(p, needs_config=False)
    p.add_argument("--model", default=None, metavar="PATH", help="also validate a saved flow file")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
