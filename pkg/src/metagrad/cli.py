"""Command-line entry point: ``metagrad verify | sweep | ablate``."""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import bench
from .verify import SUITES, select_suites

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metagrad",
        description="Verify and benchmark meta-gradient computations.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sweep configuration file")
    common.add_argument("--out", help="CSV output path (default: standard output)")
    common.add_argument("--filter", help="run only suites whose name contains this string")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
    common.add_argument("--timeline", metavar="DIR",
                        help="write a per-run (instruction_index, live_dynamic_bytes) CSV into DIR")
    common.add_argument("--wall-clock", action="store_true",
                        help="fill the wall_ms column (makes output run-dependent)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run the equivalence and oracle suites")
    sub.add_parser("sweep", parents=[common], help="measure every point of a config sweep")
    sub.add_parser("ablate", parents=[common], help="run the mode x remat x save grid")
    return parser


def cmd_verify(args) -> int:
    names = select_suites(args.filter)
    if not names:
        print(f"no suite matches filter {args.filter!r}; available: {', '.join(SUITES)}")
        return EXIT_CONFIG
    first_failure = None
    for name in names:
        start = time.perf_counter()
        result = SUITES[name]()
        print(f"{result.line()} [{time.perf_counter() - start:.1f}s]")
        if not result.passed and first_failure is None:
            first_failure = name
    if first_failure is not None:
        print(f"verification failed: {first_failure}")
        return EXIT_VERIFY
    print(f"all {len(names)} suites passed")
    return EXIT_OK


def _prepare_outputs(args, out_path):
    if out_path and out_path != "-":
        try:
            with open(out_path, "a", encoding="utf-8"):
                pass
        except OSError as exc:
            print(f"cannot write {out_path}: {exc}", file=sys.stderr)
            return False
    if args.timeline:
        try:
            os.makedirs(args.timeline, exist_ok=True)
        except OSError as exc:
            print(f"cannot create timeline directory {args.timeline}: {exc}", file=sys.stderr)
            return False
    return True


def _emit(rows, out_path) -> int:
    try:
        bench.write_csv(rows, out_path)
    except OSError as exc:
        print(f"cannot write {out_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.config:
        print("sweep needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = bench.load_config(args.config)
    except bench.ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_path = args.out or config.out
    if not _prepare_outputs(args, out_path):
        return EXIT_IO
    points = bench.sweep_points(config, args.seed)
    rows = bench.execute(points, jobs=max(1, args.jobs), timeline_dir=args.timeline,
                         wall_clock=args.wall_clock)
    return _emit(rows, out_path)


def cmd_ablate(args) -> int:
    if not _prepare_outputs(args, args.out):
        return EXIT_IO
    points = bench.ablation_points(args.seed or 0)
    rows = bench.execute(points, jobs=max(1, args.jobs), timeline_dir=args.timeline,
                         wall_clock=args.wall_clock)
    status = _emit(rows, args.out)
    if status != EXIT_OK:
        return status
    best = min(rows, key=lambda r: r.peak_dynamic_bytes).peak_dynamic_bytes
    target = next(r for r in rows if r.mode == "mixflow" and r.remat and r.save_inner_grads)
    ok = bench.checksums_agree(rows) and target.peak_dynamic_bytes == best
    print(f"ablation: checksums agree={bench.checksums_agree(rows)}, "
          f"(mode=mixflow, remat, save) minimal={target.peak_dynamic_bytes == best}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"verify": cmd_verify, "sweep": cmd_sweep, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
