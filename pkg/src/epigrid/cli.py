"""Command-line surface for the three-layer epidemic stack.

Subcommands: ``simulate`` (stochastic replicates), ``solve-patch``,
``solve-pde``, ``converge`` (a schedule of limit experiments),
``validate`` (config check only), ``lambda-bar`` (mean infectivity
tables).  Exit codes: 0 success, 1 validation or usage, 2 numerical
failure, 3 invariant violation.

Every run is a pure function of (config, seed): output bytes never vary
with --threads, which only throttles the harness worker pool.  All
output files embed the config digest and the master seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from numpy.random import SeedSequence

from .config import RunConfig, load_config
from .errors import InvariantViolation, NumericalError, ValidationError
from .fields import FieldSeries, write_fields
from .harness import (
    ExperimentPlan,
    run_deterministic_eps_limit,
    run_f0_lemma_check,
    run_joint_limit,
    run_lln_fixed_eps,
)
from .infectivity import mean_curves
from .patch import solve_patch_system
from .pde import solve_pde_marching, solve_pde_picard
from .sim.driver import run_replicate

_EXPERIMENTS = {
    "lln_fixed_eps": run_lln_fixed_eps,
    "eps_limit": run_deterministic_eps_limit,
    "joint_limit": run_joint_limit,
    "f0_check": run_f0_lemma_check,
}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="JSON config path")
    sub.add_argument("--seed", type=int, default=None,
                     help="master seed (overrides the config)")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--format", choices=("csv", "ndjson"), default="csv",
                     help="field output format")
    sub.add_argument("--threads", type=int, default=None,
                     help="harness worker threads (EPIGRID_THREADS fallback)")


def build_parser() -> _Parser:
    parser = _Parser(prog="epigrid",
                     description="spatial SI epidemics: simulate, solve, verify")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    sim = subs.add_parser("simulate", help="run stochastic replicates")
    _add_common(sim)
    sim.add_argument("--events", action="store_true",
                     help="also write one NDJSON event log per replicate")
    sim.set_defaults(func=_cmd_simulate)

    patch = subs.add_parser("solve-patch", help="solve the node-density system")
    _add_common(patch)
    patch.set_defaults(func=_cmd_solve_patch)

    pde = subs.add_parser("solve-pde", help="solve the continuum system")
    _add_common(pde)
    pde.add_argument("--backend", choices=("marching", "picard"), default=None,
                     help="time integrator (overrides the config)")
    pde.set_defaults(func=_cmd_solve_pde)

    conv = subs.add_parser("converge", help="run a limit-experiment schedule")
    _add_common(conv)
    conv.set_defaults(func=_cmd_converge)

    val = subs.add_parser("validate", help="check a config and echo settings")
    _add_common(val)
    val.set_defaults(func=_cmd_validate)

    lam = subs.add_parser("lambda-bar", help="tabulate mean infectivity curves")
    _add_common(lam)
    lam.set_defaults(func=_cmd_lambda_bar)
    return parser


def _setup(args) -> tuple:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    if seed < 0:
        raise ValidationError("seed must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, seed, out


def _meta(cfg: RunConfig, seed: int, layer: str) -> dict:
    return {"layer": layer, "config": cfg.digest, "master_seed": seed}


def _threads(args, cfg: RunConfig) -> int | None:
    if args.threads is not None:
        return args.threads
    return cfg.threads   # None falls through to EPIGRID_THREADS in the plan


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps({"digest": cfg.digest, "effective": cfg.effective},
                     sort_keys=True, indent=2))
    return 0


def _cmd_simulate(args) -> int:
    cfg, seed, out = _setup(args)
    times = cfg.sample_times()
    ext = args.format
    for r in range(cfg.replicates):
        res = run_replicate(cfg.grid, cfg.params, cfg.kernel, cfg.new_law,
                            cfg.initial_law, cfg.densities, cfg.scale,
                            SeedSequence([seed, 0, r]), times,
                            backend=cfg.sim_backend,
                            record_events=args.events)
        meta = _meta(cfg, seed, "stochastic")
        meta["replicate"] = r
        series = FieldSeries.from_sim(res, meta)
        write_fields(series, out / f"sim_r{r:04d}.{ext}", ext)
        if args.events:
            _write_events(res.events, out / f"sim_r{r:04d}.events.ndjson", meta)
    print(f"wrote {cfg.replicates} replicate file(s) to {out}")
    return 0


def _write_events(events, path, meta) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
            for t, kind, node, neighbor in events:
                fh.write(json.dumps(
                    {"t": t, "kind": kind, "node": node, "neighbor": neighbor},
                    sort_keys=True) + "\n")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def _cmd_solve_patch(args) -> int:
    cfg, seed, out = _setup(args)
    s0, i0 = cfg.densities.patch_averages(cfg.grid)
    sol = solve_patch_system(cfg.grid, cfg.params, cfg.kernel, cfg.new_law,
                             cfg.initial_law, s0, i0, cfg.step)
    series = FieldSeries.from_patch(sol, _meta(cfg, seed, "patch"))
    path = out / f"patch.{args.format}"
    write_fields(series, path, args.format)
    print(f"wrote {path}")
    return 0


def _cmd_solve_pde(args) -> int:
    cfg, seed, out = _setup(args)
    backend = args.backend if args.backend is not None else cfg.pde_backend
    solver = solve_pde_marching if backend == "marching" else solve_pde_picard
    sol = solver(cfg.densities, cfg.params, cfg.kernel, cfg.new_law,
                 cfg.initial_law, cfg.modes, cfg.step)
    meta = _meta(cfg, seed, "pde")
    meta["backend"] = backend
    series = FieldSeries.from_pde(sol, meta)
    path = out / f"pde.{args.format}"
    write_fields(series, path, args.format)
    print(f"wrote {path}")
    return 0


def _cmd_lambda_bar(args) -> int:
    cfg, seed, out = _setup(args)
    times = cfg.sample_times()
    lam, lam0 = mean_curves(cfg.new_law, cfg.initial_law, times)
    series = FieldSeries(times, (), {"lambda_bar": lam, "lambda_bar_0": lam0},
                         _meta(cfg, seed, "laws"))
    path = out / f"lambda_bar.{args.format}"
    write_fields(series, path, args.format)
    print(f"wrote {path}")
    return 0


def _cmd_converge(args) -> int:
    cfg, seed, out = _setup(args)
    if cfg.experiment is None or cfg.schedule is None:
        raise ValidationError(
            "converge needs 'experiment' and 'schedule' in the config")
    plan = ExperimentPlan(
        params=cfg.params, kernel=cfg.kernel, new_law=cfg.new_law,
        initial_law=cfg.initial_law, densities=cfg.densities,
        entries=cfg.schedule, master_seed=seed, dim=cfg.grid.dim,
        probe_times=cfg.probe_times, sample_count=cfg.sample_count,
        patch_step=cfg.step, pde_modes=cfg.reference_modes,
        threads=_threads(args, cfg), backend=cfg.sim_backend)
    report = _EXPERIMENTS[cfg.experiment](plan)
    report.meta["config"] = cfg.digest

    json_path = out / "report.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json(indent=2) + "\n")
    csv_path = out / "report.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=(
            "entry", "N", "eps", "N_eps_d", "field", "norm", "mean", "stderr"))
        writer.writeheader()
        writer.writerows(report.csv_rows())
    print(f"{report.kind}: {len(report.entries)} entries -> "
          f"{json_path} and {csv_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
