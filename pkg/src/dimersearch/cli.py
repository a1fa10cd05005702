"""Command-line harness: single runs, one-axis sweeps, self-verification.

Usage::

    dimersearch run quartic.ini
    dimersearch sweep steps.ini
    dimersearch verify
    dimersearch list-problems

Outputs go below ``$DIMERSEARCH_OUTPUT`` (default ``./dimer_runs``).  Exit
codes: 0 converged / all checks passed, 2 solver did not converge, 1 bad
configuration.
"""

import argparse
import csv
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, DimerError
from .metrics import MetricPolicy
from .problems import PROBLEMS, MorseVacancy, PhaseField
from .solvers import (
    Status,
    run_exact_rotation_dimer,
    run_linesearch_dimer,
    run_simple_dimer,
)

OUTPUT_ENV = "DIMERSEARCH_OUTPUT"
DEFAULT_OUTPUT = "dimer_runs"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2


def output_root():
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def prepare(cfg):
    """Model, start point and metric policy of a RunConfig.

    Raises ConfigError for anything that makes the configuration unusable.
    """
    try:
        model, x0, v0 = cfgmod.build_problem(cfg)
        policy = MetricPolicy.for_model(model, cfg.metric, cfg.metric_refresh)
    except ConfigError:
        raise
    except (ValueError, DimerError) as exc:
        raise ConfigError(str(exc)) from None
    return model, x0, v0, policy


def solve(cfg, prepared=None):
    """Run the configured algorithm; returns ``(model, outcome)``."""
    model, x0, v0, policy = prepared or prepare(cfg)
    if cfg.algorithm == "simple":
        out = run_simple_dimer(model, x0, v0, policy, cfg.solver, alpha=cfg.alpha, beta=cfg.beta)
    elif cfg.algorithm == "exact_rotation":
        out = run_exact_rotation_dimer(model, x0, policy, cfg.solver, alpha=cfg.alpha, v0=v0)
    else:
        out = run_linesearch_dimer(model, x0, v0, policy, cfg.solver)
    return model, out


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_record(cfg, model, out):
    rec = {
        "problem": cfg.problem,
        "algorithm": cfg.algorithm,
        "metric": cfg.metric,
        "dim": model.dim,
        "seed": cfg.seed,
        "status": out.status.value,
        "iterations": out.iterations,
        "n_gradient_calls": out.n_gradient_calls,
        "n_energy_calls": out.n_energy_calls,
        "res_x": out.res_x,
        "res_v": out.res_v,
    }
    ref = model.reference_saddle()
    if ref is not None:
        rec["saddle_distance"] = float(np.linalg.norm(out.final_state.x - ref))
    if out.message:
        rec["message"] = out.message.replace("\n", " ")
    return rec


def write_run(outdir, cfg, model, out):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "trace.csv").write_text(out.trace_csv())
    rec = summary_record(cfg, model, out)
    (outdir / "summary.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in rec.items()))
    x = out.final_state.x
    if isinstance(model, PhaseField):
        model.write_grid(x, outdir / "state.txt")
    elif isinstance(model, MorseVacancy):
        model.triangulation(x).write(outdir / "state.txt")
    return rec


def _error_record(cfg, exc):
    return {"problem": cfg.problem, "algorithm": cfg.algorithm, "metric": cfg.metric,
            "seed": cfg.seed, "status": type(exc).__name__,
            "message": str(exc).replace("\n", " ")}


def _write_error(outdir, cfg, exc):
    outdir.mkdir(parents=True, exist_ok=True)
    rec = _error_record(cfg, exc)
    (outdir / "summary.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in rec.items()))
    return rec


def cmd_run(path, stdout=sys.stdout):
    try:
        cfg = cfgmod.read_config(path)
        prepared = prepare(cfg)
    except ConfigError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = output_root() / (cfg.output or Path(path).stem)
    try:
        model, out = solve(cfg, prepared)
    except DimerError as exc:
        # e.g. a rotation that cannot reach its tolerance
        rec = _write_error(outdir, cfg, exc)
        print(f"status={rec['status']} {rec['message']}", file=stdout)
        return EXIT_NOT_CONVERGED
    rec = write_run(outdir, cfg, model, out)
    print(" ".join(f"{k}={_fmt(rec[k])}" for k in
                   ("status", "iterations", "n_gradient_calls", "res_x", "res_v")), file=stdout)
    print(f"output: {outdir}", file=stdout)
    return EXIT_OK if out.status == Status.CONVERGED else EXIT_NOT_CONVERGED


def _sweep_one(job):
    raw, axis, value, outdir = job
    outdir = Path(outdir)
    cfg = cfgmod.build_run(cfgmod.with_value(raw, axis, value))
    try:
        model, out = solve(cfg)
    except DimerError as exc:
        return value, _write_error(outdir, cfg, exc)["status"], "", ""
    write_run(outdir, cfg, model, out)
    return value, out.status.value, out.iterations, out.n_gradient_calls


def _slug(text):
    return re.sub(r"[^A-Za-z0-9._=+-]", "_", text)


def cmd_sweep(path, stdout=sys.stdout):
    try:
        sweep = cfgmod.read_config(path, sweep=True)
    except ConfigError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = output_root() / (sweep.base.output or Path(path).stem)
    label = "+".join(key for _, key in sweep.axis)
    jobs = [(sweep.raw, sweep.axis, value, str(root / _slug(f"{label}={value}")))
            for value in sweep.values]
    n_workers = min(sweep.jobs, len(jobs), os.cpu_count() or 1)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "status", "iters", "n_grad"])
        w.writerows(rows)
    for row in rows:
        print(f"{label}={row[0]} status={row[1]} iters={row[2]} n_grad={row[3]}", file=stdout)
    print(f"output: {root}", file=stdout)
    return EXIT_OK


def cmd_verify(stdout=sys.stdout):
    from .verify import run_checks

    results = run_checks()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}", file=stdout)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed", file=stdout)
    return EXIT_OK if n_fail == 0 else EXIT_NOT_CONVERGED


def cmd_list_problems(stdout=sys.stdout):
    for name, desc in PROBLEMS.items():
        params = ", ".join(cfgmod.PROBLEM_PARAMS[name]) or "-"
        print(f"{name:<14} {desc}  [params: {params}]", file=stdout)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dimersearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="solve one configuration")
    p.add_argument("file")
    p = sub.add_parser("sweep", help="solve a one-axis family of configurations")
    p.add_argument("file")
    sub.add_parser("verify", help="run the built-in consistency checks")
    sub.add_parser("list-problems", help="show the available energy models")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.file)
    if args.command == "sweep":
        return cmd_sweep(args.file)
    if args.command == "verify":
        return cmd_verify()
    return cmd_list_problems()


if __name__ == "__main__":
    sys.exit(main())
