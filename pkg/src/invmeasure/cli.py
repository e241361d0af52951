"""Command-line entry point.

Stage commands take a JSON experiment config and run the pipeline up to that
stage, reusing cached artifacts. The ``replicate-*`` commands run the worked
examples and print their tables.

Exit codes: 0 on success, 2 for configuration errors, 3 when a stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import replicate as rep
from .errors import ConfigError, ExtractionFailed, InvMeasureError, StageError
from .pipeline import ExperimentConfig, output_root, run_pipeline, section_of, table_report, write_json
from .recovery import extract_atoms
from .sdpsolver import SolverSettings

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
STAGE_COMMANDS = ("simulate", "edmd", "assemble", "solve", "recover")


def _settings(args) -> SolverSettings | None:
    kw = {}
    if getattr(args, "max_iter", None):
        kw["max_iter"] = args.max_iter
    if getattr(args, "time_limit", None):
        kw["time_limit"] = args.time_limit
    return SolverSettings(**kw) if kw else None


def _emit(args, name: str, rows: list[dict], extra: dict | None = None):
    csv_text, plain = table_report(rows)
    print(plain, end="")
    root = output_root(args.out) / name
    root.mkdir(parents=True, exist_ok=True)
    (root / "table.csv").write_text(csv_text)
    write_json(root / "table.json", {"rows": rows, **(extra or {})})
    print(f"wrote {root / 'table.csv'}")


def cmd_stage(args) -> int:
    config = ExperimentConfig.load(args.config)
    b = run_pipeline(config, until=args.command, out=args.out, use_cache=not args.no_cache)
    for stage, path in b.paths.items():
        print(f"{stage}: {path}")
    if b.report is not None:
        print(f"status={b.report['status']} objective={b.report['objective']:.10g}")
    return EXIT_OK


def cmd_atoms(args) -> int:
    config = ExperimentConfig.load(args.config)
    b = run_pipeline(config, until="solve", out=args.out, use_cache=not args.no_cache)
    try:
        atoms = extract_atoms(b.y, b.spec, rank_tol=args.rank_tol)
    except ExtractionFailed as exc:
        raise StageError("recover", exc) from exc
    run_dir = output_root(args.out or config.output) / config.name
    run_dir.mkdir(parents=True, exist_ok=True)
    path = write_json(run_dir / "atoms.json", atoms.to_dict())
    for p, w in zip(atoms.points, atoms.weights):
        print(" ".join(f"{v:.10f}" for v in p), f"weight={w:.6f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_upo(args) -> int:
    config = ExperimentConfig.load(args.config)
    if config.data.get("kind") != "section":
        raise ConfigError("upo needs data.kind = 'section'")
    b = run_pipeline(config, until="edmd", out=args.out, use_cache=not args.no_cache)
    from .dynamics import BUILTIN_SYSTEMS
    from .pipeline import upo_hunt

    field = BUILTIN_SYSTEMS[config.system](**config.params)
    cat = upo_hunt(b.lie, field, section_of(config.data), count=args.count, seed=args.seed,
                   settings=_settings(args), max_period=args.max_period)
    _print_catalog(cat)
    run_dir = output_root(args.out or config.output) / config.name
    run_dir.mkdir(parents=True, exist_ok=True)
    path = write_json(run_dir / "upos.json", cat.to_dict())
    print(f"wrote {path}")
    return EXIT_OK


def _print_catalog(cat):
    for orbit in cat.orbits:
        pts = " ".join(f"{v:.8f}" for v in orbit.section_points)
        print(f"period {orbit.period}  T={orbit.T:.6f}  residual={orbit.residual:.1e}  x2: {pts}")
    print(f"attempts={cat.attempts} extracted={cat.extracted} periods={cat.periods()}")


def cmd_table1(args) -> int:
    rows = rep.table1(ms=args.m, settings=_settings(args))
    _emit(args, "table1", rows)
    if args.table2:
        _emit(args, "table2", rep.table2(settings=_settings(args)))
    if args.atoms:
        for row in rep.logistic_atoms(settings=_settings(args)):
            print(f"F = y_{row['objective']}: atoms {np.round(row['atoms'], 6).tolist()}")
    return EXIT_OK


def cmd_doublewell(args) -> int:
    steps = 5_000_000 if args.full else args.steps
    res = rep.double_well_table(steps=steps, seed=args.seed, threshold=not args.no_threshold,
                                settings=_settings(args))
    rows = [{**r, "alpha": ",".join(map(str, r["alpha"]))} for r in res.rows]
    _emit(args, "doublewell", rows, {"solver": res.report, "snapshots": res.snapshots})
    print(f"snapshots={res.snapshots} solver={res.report['status']} seconds={res.seconds:.1f}")
    return EXIT_OK


def cmd_rossler(args) -> int:
    if not args.skip_moments:
        rows = rep.rossler_moments(t_end=args.t_end, t_average=args.t_average, settings=_settings(args))
        rows = [{**r, "alpha": ",".join(map(str, r["alpha"]))} for r in rows]
        _emit(args, "rossler-moments", rows)
    if args.upo:
        cat = rep.rossler_upos(t_end=args.section_t_end, count=args.count, seed=args.seed,
                               max_period=args.max_period, settings=_settings(args))
        _print_catalog(cat)
        run_dir = output_root(args.out) / "rossler-upo"
        run_dir.mkdir(parents=True, exist_ok=True)
        path = write_json(run_dir / "upos.json", cat.to_dict())
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invmeasure", description=__doc__.splitlines()[0])
    p.add_argument("--out", help="output root (default: $INVMEASURE_OUT or ./invmeasure-out)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def solver_opts(sp):
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--time-limit", type=float, help="seconds per SDP solve")

    for name in STAGE_COMMANDS:
        sp = sub.add_parser(name, help=f"run the pipeline up to '{name}'")
        sp.add_argument("config")
        sp.add_argument("--no-cache", action="store_true")
        sp.set_defaults(func=cmd_stage)

    sp = sub.add_parser("atoms", help="solve, then extract an atomic measure")
    sp.add_argument("config")
    sp.add_argument("--rank-tol", type=float, default=1e-6)
    sp.add_argument("--no-cache", action="store_true")
    sp.set_defaults(func=cmd_atoms)

    sp = sub.add_parser("upo", help="periodic orbits from section data by random objectives")
    sp.add_argument("config")
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-period", type=int, default=8)
    sp.add_argument("--no-cache", action="store_true")
    solver_opts(sp)
    sp.set_defaults(func=cmd_upo)

    sp = sub.add_parser("replicate-table1", help="logistic map CDF errors (plus Table 2 and atoms)")
    sp.add_argument("--m", type=int, nargs="+", default=[100, 1000, 10_000, 100_000], help="orbit lengths")
    sp.add_argument("--table2", action="store_true", help="also compare moments with a histogram")
    sp.add_argument("--atoms", action="store_true", help="also extract atoms for F = y_1, y_3, y_5")
    solver_opts(sp)
    sp.set_defaults(func=cmd_table1)

    sp = sub.add_parser("replicate-doublewell", help="double-well Chebyshev expectations")
    sp.add_argument("--steps", type=int, default=500_000)
    sp.add_argument("--full", action="store_true", help="use 5e6 steps")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-threshold", action="store_true")
    solver_opts(sp)
    sp.set_defaults(func=cmd_doublewell)

    sp = sub.add_parser("replicate-rossler", help="Rossler physical measure and periodic orbits")
    sp.add_argument("--t-end", type=float, default=1000.0)
    sp.add_argument("--t-average", type=float, default=1e5)
    sp.add_argument("--skip-moments", action="store_true")
    sp.add_argument("--upo", action="store_true", help="also run the periodic-orbit search")
    sp.add_argument("--section-t-end", type=float, default=5000.0)
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-period", type=int, default=8)
    solver_opts(sp)
    sp.set_defaults(func=cmd_rossler)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except InvMeasureError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    logging.getLogger(__name__).info("done in %.1fs", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
