"""Command line entry point: run, compare and bench."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .report import emit, timing_stats, timing_table
from .scenario import BUNDLED, MODES, load_scenario
from .sim import compare, run

COMPARE_COLUMNS = (
    "mode", "success", "completed", "collision", "completion_time", "min_clearance", "min_barrier",
    "stuck_events", "mpc_median_ms", "mpc_max_ms", "filter_qp_median_ms", "filter_qp_max_ms",
    "closest_points_total_median_ms", "closest_points_total_max_ms",
    "closest_points_per_obstacle_median_ms", "closest_points_per_obstacle_max_ms",
    "cycle_median_ms", "cycle_max_ms",
)


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise SystemExit(f"error: no scenario file {path!r} (bundled names: {', '.join(BUNDLED)})")
    except (ValueError, KeyError, TypeError) as exc:
        raise SystemExit(f"error: invalid scenario {path!r}: {exc}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return "-" if v is None else str(v)


def cmd_run(args) -> int:
    spec = _load(args.scenario)
    rl = run(spec, seed=args.seed, mode=args.mode)
    paths = emit(rl, args.out)
    for k, v in rl.summary().items():
        print(f"{k:16s} {_fmt(v)}")
    if rl.transitions:
        print("recovery transitions:")
        for t, a, b, psi_d in rl.transitions:
            print(f"  t={t:6.1f}s  {a} -> {b}  psi_d={psi_d:+.3f}")
    print()
    print(timing_table(rl), end="")
    print()
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return 0


def cmd_compare(args) -> int:
    spec = _load(args.scenario)
    rows = compare(spec, seed=args.seed)
    cols = ("mode", "success", "collision", "completion_time", "min_clearance", "mpc_median_ms",
            "filter_qp_median_ms", "closest_points_per_obstacle_median_ms", "cycle_median_ms")
    print(" | ".join(cols))
    for r in rows:
        print(" | ".join(_fmt(r.get(c)) for c in cols))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        p = out / f"{spec.name}_compare.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {p}")
    return 0


def cmd_bench(args) -> int:
    if args.cycles < 1:
        raise SystemExit("error: --cycles must be at least 1")
    spec = _load(args.scenario)
    rl = run(spec, seed=args.seed, mode=args.mode, max_cycles=args.cycles, keep_world=False)
    stats = timing_stats(rl)
    print(f"{spec.name} / {rl.mode}: {len(rl.records)} cycles")
    print(timing_table(stats), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="narrowpass", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log planner and filter warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write CSV, plots and a timing table")
    p.add_argument("scenario", help="scenario YAML file or bundled scenario name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--mode", choices=MODES, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run every inflation mode on the same world and seed")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="also write a comparison CSV here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time the control cycle for a fixed number of cycles")
    p.add_argument("scenario")
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
