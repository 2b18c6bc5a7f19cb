"""Command line entry point ``blockstep``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .experiment import (ConfigError, ExperimentFailed, execute, load_config, preset_path,
                         sweep)
from .stats import write_summary_csv

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _resolve_config(text: str) -> Path:
    p = Path(text)
    if p.exists() or p.suffix:
        return p
    return preset_path(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockstep",
                                     description="Vectorized DIRK time stepping with block Krylov solvers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True,
                     help="key=value config file or bundled preset name (e.g. convdiff_desk)")
    run.add_argument("--s", type=int, help="time steps per window")
    run.add_argument("--nx", type=int, help="cells in x (ny scales with the preset aspect)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--vtk", action="store_true", help="write VTK snapshots per time step")

    sw = sub.add_parser("sweep", help="run one experiment per window size")
    sw.add_argument("--config", required=True)
    sw.add_argument("--s", type=_int_list, required=True, help="e.g. 1,2,4,8,16")
    sw.add_argument("--nx", type=int)
    sw.add_argument("--out")

    bench = sub.add_parser("bench-bop", help="spBOP microbenchmark")
    bench.add_argument("--k", type=_int_list, default=[1, 2, 4, 8, 16])
    bench.add_argument("--n", type=int, default=1 << 20, help="matrix rows")
    bench.add_argument("--z", type=int, default=7, help="nonzeros per row")
    bench.add_argument("--repetitions", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default="bop_benchmark.csv")
    return parser


def _overrides(args, base) -> dict:
    ov = {"out": getattr(args, "out", None)}
    if getattr(args, "nx", None):
        ov["nx"] = args.nx
        ov["ny"] = max(1, round(args.nx * base.ny / base.nx))
    if getattr(args, "vtk", False):
        ov["vtk"] = True
    if isinstance(getattr(args, "s", None), int):
        ov["window"] = args.s
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("BLOCKSTEP_THREADS", "1")
    if threads != "1":
        print(f"error: BLOCKSTEP_THREADS={threads} is not supported (must be 1)", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "bench-bop":
        from .perf import has_simd, run_bop_microbenchmark
        report = run_bop_microbenchmark(args.n, args.z, args.k, args.repetitions, args.seed,
                                        csv_path=args.out)
        for w in report.warnings:
            print(f"warning: {w}", file=sys.stderr)
        if not has_simd():
            print("warning: no SIMD instruction set detected", file=sys.stderr)
        for r in report.rows:
            print(f"k={r.k:3d}  measured {r.time_per_rhs_ns / 1e6:9.3f} ms/rhs  "
                  f"model {r.model_time_per_rhs_ns / 1e6:9.3f} ms/rhs  ({r.binding.value})")
        return EXIT_OK

    try:
        base = load_config(_resolve_config(args.config))
        cfg = load_config(_resolve_config(args.config), _overrides(args, base))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        try:
            res = execute(cfg)
        except ExperimentFailed as exc:
            if exc.stats is not None:
                write_summary_csv(Path(cfg.out) / f"{cfg.label}results.csv", [exc.stats])
            print(f"solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        write_summary_csv(Path(cfg.out) / f"{cfg.label}results.csv", [res.stats])
        st = res.stats
        print(f"{cfg.label} s={st.s}: nl_iterations={st.nl_iterations} "
              f"ls_iterations={st.ls_iterations} ls_time={st.ls_time:.3f}s "
              f"prec_setup_time={st.prec_setup_time:.3f}s")
        return EXIT_OK

    failures = []
    stats = sweep(cfg, args.s, failures=failures)
    for st in stats:
        print(f"{cfg.label} s={st.s}: nl_iterations={st.nl_iterations} "
              f"ls_iterations={st.ls_iterations} ls_time={st.ls_time:.3f}s")
    for s, exc in failures:
        print(f"solver failure for s={s}: {exc}", file=sys.stderr)
    return EXIT_SOLVER if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
