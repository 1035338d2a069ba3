"""Command line front end: ``run``, ``suite`` and ``rates``."""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import ObstacleError
from .estimator import VARIANTS
from .adaptive import FAMILIES, REFINEMENTS, RECORD_FIELDS
from .problems import PROBLEMS
from .study import StudyConfig, fit_rate, read_csv, run_study

log = logging.getLogger("spacetime_obstacle")

# (name, problem, family, refine, max_elems) of every benchmark study
SUITE = (
    ("stefan_simplicial_uniform", "stefan", "simplicial", "uniform", 32768),
    ("stefan_tensor_uniform", "stefan", "tensor", "uniform", 16384),
    ("pyramid_simplicial_uniform", "pyramid", "simplicial", "uniform", 32768),
    ("pyramid_simplicial_adaptive", "pyramid", "simplicial", "adaptive", 60000),
    ("pyramid_tensor_uniform", "pyramid", "tensor", "uniform", 16384),
    ("american_option_simplicial_uniform", "american_option", "simplicial", "uniform", 32768),
    ("american_option_simplicial_adaptive", "american_option", "simplicial", "adaptive", 60000),
    ("american_option_tensor_uniform", "american_option", "tensor", "uniform", 16384),
    ("heat2d_simplicial_uniform", "heat2d", "simplicial", "uniform", 100000),
)

# element-count range of the asymptotic fit: four uniform levels in one space dimension
RATE_SPAN = 64.0

_STUDY_FLAGS = ("problem", "family", "refine", "theta", "levels", "max_elems", "estimator",
                "quad_degree", "out", "vtk", "seed_mesh", "lambda_weight", "single_thread")


def _add_study_flags(p, suite=False):
    if not suite:
        p.add_argument("--problem", choices=sorted(PROBLEMS))
        p.add_argument("--family", choices=FAMILIES)
        p.add_argument("--refine", choices=REFINEMENTS)
        p.add_argument("--levels", type=int, help="maximal number of levels")
        p.add_argument("--max-elems", type=int, help="stop once a level has this many elements")
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--vtk", help="VTK file for the final mesh and u")
        p.add_argument("--seed-mesh", help="initial grid: 'nt,nx' (d=1) or 'n' (d=2)")
        p.add_argument("--config", help="JSON file with study settings (flags win)")
    p.add_argument("--theta", type=float, help="bulk marking parameter")
    p.add_argument("--estimator", choices=VARIANTS)
    p.add_argument("--quad-degree", type=int)
    p.add_argument("--lambda-weight", type=float, help="override the residual weight Lambda")
    p.add_argument("--single-thread", action="store_true", default=None,
                   help="one BLAS thread and zero wall times (byte-identical output)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spacetime-obstacle",
        description="Adaptive space-time least-squares FEM for parabolic obstacle problems.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one convergence study")
    _add_study_flags(run)

    suite = sub.add_parser("suite", help="run every benchmark study")
    suite.add_argument("--out", default="results", help="output directory")
    suite.add_argument("--jobs", type=int, default=1, help="parallel processes")
    suite.add_argument("--only", nargs="*", help="restrict to these study names")
    _add_study_flags(suite, suite=True)

    rates = sub.add_parser("rates", help="fit convergence rates from CSV tables")
    rates.add_argument("csv", nargs="+")
    rates.add_argument("--columns", nargs="*", default=["rho_total", "err_total"])
    fit = rates.add_mutually_exclusive_group()
    fit.add_argument("--window", type=int, help="number of final levels in the fit")
    fit.add_argument("--span", type=float, help="fit levels with at least n_last/span elements "
                     f"(default {RATE_SPAN:g})")
    return parser


def _overrides(args):
    return {k: getattr(args, k, None) for k in _STUDY_FLAGS}


def _print_records(records, out=None):
    out = out or sys.stdout
    cols = ("level", "n_elements", "n_dofs", "rho_total", "err_total", "newton_iterations")
    print("  ".join(f"{c:>12}" for c in cols), file=out)
    for r in records:
        vals = [getattr(r, c) for c in cols]
        print("  ".join(f"{v:>12}" if isinstance(v, int) else
                        f"{'-':>12}" if v is None else f"{v:12.4e}" for v in vals), file=out)


def cmd_run(args):
    over = _overrides(args)
    if args.config:
        config = StudyConfig.from_file(args.config, **over)
    else:
        config = StudyConfig.from_mapping({}, **over)
    records = run_study(config)
    _print_records(records)
    return 0


def _suite_job(item):
    name, config = item
    records = run_study(config)
    return name, records


def cmd_suite(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    # --out names the directory here, so it must not reach the per-study config
    over = {k: v for k, v in _overrides(args).items() if v is not None and k != "out"}
    selected = [s for s in SUITE if not args.only or s[0] in args.only]
    if args.only and len(selected) != len(set(args.only)):
        names = {s[0] for s in SUITE}
        raise ObstacleError(f"unknown study names: {sorted(set(args.only) - names)}")
    jobs = []
    for name, problem, family, refine, max_elems in selected:
        cfg = StudyConfig.from_mapping(
            {"problem": problem, "family": family, "refine": refine, "max_elems": max_elems,
             "out": str(outdir / f"{name}.csv")}, **over)
        jobs.append((name, cfg))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_suite_job, jobs))
    else:
        results = [_suite_job(j) for j in jobs]
    for name, records in results:
        rate = fit_rate(records, "rho_total", span=RATE_SPAN) if len(records) >= 2 else float("nan")
        print(f"{name}: {len(records)} levels, rho_total slope {rate:+.3f}")
    return 0


def cmd_rates(args):
    for col in args.columns:
        if col not in RECORD_FIELDS:
            raise ObstacleError(f"unknown column {col!r}")
    span = None if args.window else (args.span or RATE_SPAN)
    for path in args.csv:
        records = read_csv(path)
        parts = []
        for col in args.columns:
            if any(getattr(r, col) is None for r in records):
                parts.append(f"{col} -")
            else:
                parts.append(f"{col} {fit_rate(records, col, args.window, span):+.4f}")
        print(f"{path}: " + ", ".join(parts))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "suite": cmd_suite, "rates": cmd_rates}[args.command]
    try:
        return handler(args)
    except ObstacleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
