"""Command line entry point: ``quenchlab <subcommand> ...``.

Exit status is 0 when every declared check passes, 1 when a check fails or a
run is degraded, and 2 for usage, configuration and file errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .barrier import BarrierError, barrier_report, build_barrier, certify_supersolution, write_report
from .harness import (ConfigError, EstimatorSettings, ExperimentConfig, collect_reports, run_estimators,
                      run_experiment, write_summary)
from .model import EllipticOperator, ModelError
from .radial import ode_residual, radial_shoot
from .solver import SolverError, read_field

OPS = ("trace", "pucci+", "pucci-", "hessian-iota")


class UsageError(Exception):
    pass


def _operator(kind, lam, Lam, dim):
    if kind == "trace":
        return EllipticOperator.trace(N=dim)
    if kind == "pucci+":
        return EllipticOperator.pucci_plus(lam, Lam)
    if kind == "pucci-":
        return EllipticOperator.pucci_minus(lam, Lam)
    return EllipticOperator.hessian_iota(3, N=dim)


def _outdir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(args, mode):
    overrides = {"mode": mode}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = ExperimentConfig.load(args.config, **overrides)
    man = run_experiment(cfg, args.out)
    state = "cached" if man.cached else man.status
    print(f"{mode}: {state}; {len(man.files)} files in {args.out or cfg.out}")
    for flag in man.flags:
        print(f"  flag: {flag}")
    if man.checks_passed is not None:
        print(f"  checks: {'pass' if man.checks_passed else 'FAIL'}")
    return 0 if man.status == "ok" and man.checks_passed is not False else 1


def cmd_solve(args):
    return _run(args, "solve")


def cmd_sweep(args):
    return _run(args, "sweep")


def cmd_oracle(args):
    op = _operator(args.op, args.lam, args.Lam, args.dim)
    prof = radial_shoot(args.gamma, op, args.dim, r_max=args.r_max)
    res = float(np.max(ode_residual(prof)))
    out = _outdir(args, ".")
    path = out / f"profile_{op.kind}_N{args.dim}.csv"
    prof.write_csv(path)
    print(f"oracle: alpha={prof.alpha:.12g} c_star={prof.c_star:.12g} max residual={res:.3e} -> {path}")
    return 0 if res <= 1e-8 else 1


def cmd_barrier(args):
    op = _operator(args.op, args.lam, args.Lam, args.dim)
    spec = build_barrier(args.gamma, args.sigma0, args.eta, op, args.M, N=args.dim)
    cert = certify_supersolution(spec)
    out = _outdir(args, ".")
    path = out / "barrier.json"
    write_report(path, barrier_report(spec, cert))
    worst = min(v for v in cert.worst_margin.values() if v is not None)
    print(f"barrier-check: A={spec.A:.6g} certified={cert.passed} worst margin={worst:.3e} -> {path}")
    return 0 if cert.passed else 1


def cmd_estimate(args):
    u = read_field(args.field)
    cfg = ExperimentConfig.load(args.config) if args.config else None
    gamma = args.gamma if args.gamma is not None else (cfg.gamma if cfg else 0.5)
    eps = args.epsilon
    if eps is None and cfg is not None:
        eps = cfg.final_epsilon()
    if cfg is not None:
        settings = cfg.settings(grid=u.grid, epsilon=eps)
        settings.gamma = gamma
    else:
        settings = EstimatorSettings.for_grid(u.grid, gamma, eps)
        if u.grid.dim == 2:
            settings.estimators += ("neighborhood", "boxcount")
    if args.c1 is not None:
        settings.c1 = args.c1
    if args.seed is not None:
        settings.seed = args.seed
    rep = run_estimators(u, settings, provenance={"field": str(args.field)})
    out = _outdir(args, ".")
    (out / "tables").mkdir(exist_ok=True)
    rep.write_json(out / "estimates.json")
    rep.write_tables(out / "tables")
    for c in sorted(rep.checks, key=lambda c: c.name):
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name} = {c.value:.6g}  ({c.tolerance})")
    if rep.results.get("skipped"):
        print(f"skipped (no admissible center): {', '.join(rep.results['skipped'])}")
    return 0 if rep.passed else 1


def cmd_report(args):
    root = Path(args.out or ".")
    if not root.is_dir():
        raise UsageError(f"no such directory: {root}")
    rows = collect_reports(root)
    if not rows:
        raise UsageError(f"no reports found under {root}")
    write_summary(rows, root / "summary.csv")
    width = max(len(r[0]) for r in rows)
    for report, name, value, tol, ok in rows:
        val = "-" if value is None else f"{value:.6g}"
        print(f"{'pass' if ok else 'FAIL'}  {report:<{width}}  {name:<24} {val:>12}  {tol}")
    return 0 if all(r[4] for r in rows) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="quenchlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False, field=False, physics=False):
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for free boundary point sampling")
        if config:
            sp.add_argument("--config", metavar="PATH", required=config == "required", help="experiment config file")
        if field:
            sp.add_argument("--field", metavar="PATH", required=True, help="field file")
        if physics:
            sp.add_argument("--gamma", type=float, default=0.5 if physics == "defaults" else None)
            sp.add_argument("--op", choices=OPS, default="trace")
            sp.add_argument("--lam", type=float, default=1.0)
            sp.add_argument("--Lam", type=float, default=2.0)

    s = sub.add_parser("solve", help="minimal solution for a config")
    common(s, config="required")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("sweep", help="eps continuation sweep for a config")
    common(s, config="required")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("oracle", help="radial reference profile as CSV")
    common(s, physics="defaults")
    s.add_argument("--dim", type=int, default=1, choices=(1, 2, 3))
    s.add_argument("--r-max", type=float, default=1.0)
    s.set_defaults(func=cmd_oracle)
    s = sub.add_parser("barrier-check", help="tune and certify the radial supersolution")
    common(s, physics="defaults")
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--sigma0", type=float, default=0.25)
    s.add_argument("--M", type=float, help="domain bound, default 2 eta")
    s.add_argument("--dim", type=int, default=2, choices=(1, 2, 3))
    s.set_defaults(func=cmd_barrier)
    s = sub.add_parser("estimate", help="geometry estimators on a field file")
    common(s, config=True, field=True)
    s.add_argument("--gamma", type=float)
    s.add_argument("--epsilon", type=float, help="default: config value or the grid's resolution floor")
    s.add_argument("--c1", type=float, help="free boundary level multiplier (default 2)")
    s.set_defaults(func=cmd_estimate)
    s = sub.add_parser("report", help="collate JSON reports under --out into summary.csv")
    common(s)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, BarrierError, ModelError, SolverError, geo.GeometryError) as exc:
        print(f"quenchlab {args.command}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, UsageError)) else 1
    except OSError as exc:
        print(f"quenchlab {args.command}: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 2
