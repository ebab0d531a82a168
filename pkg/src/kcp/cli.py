"""Command-line benchmark and verification driver.

Subcommands: verify | tables | curves | timing | train-toy.  Every command
is deterministic for a fixed --seed except the wall-clock columns of
``timing``.  Reports are CSV; curves/timing/train-toy also render a PNG
next to the CSV unless --no-figure is given.  Exit codes: 0 success, 1
property or target failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from math import prod
from pathlib import Path

import numpy as np

from . import complexity, figures, verify
from .lstm import TrainingDivergedError, train_toy
from .multiply import multiply_dense_oracle, multiply_parallel, multiply_strict
from .weights import KCPConfig, load, random_init, save

TIMING_SHAPES = (
    ("ucf11", (8, 20, 20, 18), (4, 4, 4, 4), 4),
    ("ucf50", (15, 16, 16, 15), (8, 6, 6, 8), 6),
)
DEFAULT_C_GRID = (2, 4, 8, 16, 32, 64, 100)


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


def _config_from_args(args) -> KCPConfig:
    K, cA, cB = args.ranks
    if len(args.shape_in) != len(args.shape_out):
        raise SystemExit("--shape-in and --shape-out must have the same length")
    return KCPConfig.uniform(args.shape_in, args.shape_out, K, cA, cB)


def cmd_verify(args) -> int:
    exit_code = 0
    lines = []

    if args.export_weights:
        config = _config_from_args(args)
        w = random_init(config, seed=args.seed)
        save(w, args.export_weights)
        lines.append(("export_weights", "PASS", 1, f"wrote {w.n_params} scalars"))

    if args.import_weights:
        w = load(args.import_weights)
        x = np.random.default_rng(args.seed).standard_normal(w.config.m)
        got = multiply_strict(x, w).y
        ref = multiply_dense_oracle(x, w)
        err = float(np.max(np.abs(got - ref)) / (1.0 + np.max(np.abs(ref))))
        ok = err <= verify.MULTIPLY_TOL
        lines.append(
            ("import_weights", "PASS" if ok else "FAIL", 1, f"oracle err {err:.3e}")
        )
        if not ok:
            exit_code = 1

    for r in verify.run_suite(seed=args.seed, poison=args.poison, scale=args.trials_scale):
        lines.append((r.name, "PASS" if r.passed else "FAIL", r.trials, r.detail))
        if not r.passed:
            exit_code = 1

    for name, status, trials, detail in lines:
        suffix = "" if status == "PASS" else f" [seed {args.seed}]"
        print(f"{status} {name} ({trials} trials): {detail}{suffix}")
    if args.out:
        _write_csv(args.out, ("property", "status", "trials", "detail"), lines)
    print("verification", "passed" if exit_code == 0 else "FAILED")
    return exit_code


def cmd_tables(args) -> int:
    rows = complexity.benchmark_rows()
    out_rows = [
        (
            r["dataset"],
            "({},{},{})".format(*r["ranks"]),
            r["sharing"],
            r["params"],
            r["compression_ratio"],
            r["dense_params"],
            r["mflops"],
            r["reference_params"],
            r["reference_ratio"],
            r["reference_mflops"],
            "match" if r["match"] else "mismatch",
        )
        for r in rows
    ]
    header = (
        "dataset",
        "ranks",
        "sharing",
        "params",
        "compression_ratio",
        "dense_params",
        "mflops",
        "reference_params",
        "reference_ratio",
        "reference_mflops",
        "match",
    )
    if args.out:
        _write_csv(args.out, header, out_rows)
    for row in out_rows:
        print(",".join(str(v) for v in row))
    mismatches = [r for r in rows if not r["match"]]
    print(f"{len(rows)} rows, {len(mismatches)} known mismatch(es)")
    return 0


def cmd_curves(args) -> int:
    r_range = range(args.r_min, args.r_max + 1)
    rows = complexity.figure4_curves(args.d, args.m, args.n, r_range, P=args.P, K=args.K)
    if args.out:
        _write_csv(args.out, ("r", "format", "params", "flops"), rows)
        if not args.no_figure:
            figures.render_curves(rows, _figure_path(args.out))
    # sweep-tail ordering: the branch format must be strictly cheapest on
    # both axes from rank 16 up
    ok = True
    for r in r_range:
        if r < 16:
            continue
        at_r = [row for row in rows if row[0] == r]
        kcp = next(row for row in at_r if row[1] == "KCP")
        others = [row for row in at_r if row[1] != "KCP"]
        if not all(kcp[2] < o[2] and kcp[3] < o[3] for o in others):
            ok = False
            print(f"ordering violated at r={r}")
    print(
        f"{len(rows)} rows over r={args.r_min}..{args.r_max}; "
        + ("KCP strictly minimal for every r >= 16" if ok else "ordering FAILED")
    )
    return 0 if ok else 1


def _strict_peak_scalars(config: KCPConfig) -> int:
    """Largest intermediate or factor the strict chain materializes."""
    C = config.C
    peak = 0
    for i in range(config.d):
        P = prod(config.n[:i]) * prod(config.m[i + 1 :])
        peak = max(peak, P * config.n[i] * C, config.m[i] * config.n[i] * C)
    return peak


def _best_ms(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, (time.perf_counter() - t0) * 1e3)
    return best


def cmd_timing(args) -> int:
    if args.shape_in or args.shape_out:
        if not (args.shape_in and args.shape_out):
            raise SystemExit("--shape-in and --shape-out must be given together")
        K = args.ranks[0]
        shapes = (("custom", args.shape_in, args.shape_out, K),)
    else:
        shapes = TIMING_SHAPES
    grid = args.c_grid or DEFAULT_C_GRID
    rng = np.random.default_rng(args.seed)
    mem_limit_scalars = int(args.mem_limit * 1e9 / 8)

    rows = []
    for name, m, n, K in shapes:
        x = rng.standard_normal(m)
        for c in grid:
            config = KCPConfig.uniform(m, n, K, c, c)
            peak = _strict_peak_scalars(config)
            if 4 * peak > mem_limit_scalars:
                rows.append(
                    {
                        "shape": name,
                        "c": c,
                        "workers": args.workers,
                        "serial_ms": "",
                        "parallel_ms": "",
                        "speedup": "",
                        "status": "skipped_mem",
                    }
                )
                continue
            w = random_init(config, seed=args.seed)
            serial = _best_ms(lambda: multiply_strict(x, w), args.repeats)
            parallel = _best_ms(
                lambda: multiply_parallel(x, w, workers=args.workers), args.repeats
            )
            rows.append(
                {
                    "shape": name,
                    "c": c,
                    "workers": args.workers,
                    "serial_ms": round(serial, 3),
                    "parallel_ms": round(parallel, 3),
                    "speedup": round(serial / parallel, 3),
                    "status": "ok",
                }
            )
    header = ("shape", "c", "workers", "serial_ms", "parallel_ms", "speedup", "status")
    if args.out:
        _write_csv(args.out, header, [[r[h] for h in header] for r in rows])
        if not args.no_figure and any(r["status"] == "ok" for r in rows):
            figures.render_timing(rows, _figure_path(args.out))
    for r in rows:
        print(",".join(str(r[h]) for h in header))
    return 0


def cmd_train_toy(args) -> int:
    try:
        log = train_toy(
            task_seed=args.seed,
            epochs=args.epochs,
            lr=args.lr,
            sharing=args.sharing,
        )
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}")
        return 1
    if args.out:
        _write_csv(
            args.out,
            ("epoch", "loss", "train_accuracy"),
            [(r["epoch"], f"{r['loss']:.6f}", f"{r['train_accuracy']:.4f}") for r in log],
        )
        if not args.no_figure:
            figures.render_training(log, _figure_path(args.out))
    final = log[-1]
    print(
        f"epochs run: {len(log)}, final loss {final['loss']:.4f}, "
        f"final train accuracy {final['train_accuracy']:.3f}"
    )
    return 0 if final["train_accuracy"] >= 0.9 else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--out", type=str, default=None, help="CSV output path")
    common.add_argument("--workers", type=int, default=2, help="worker threads")

    parser = argparse.ArgumentParser(
        prog="kcp-bench",
        description="verification suites, complexity tables, rank-sweep curves, "
        "timing, and toy training for KCP-compressed weights",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the property suites")
    p.add_argument("--poison", action="store_true",
                   help="negative control: corrupt one factor entry mid-check")
    p.add_argument("--trials-scale", type=float, default=1.0,
                   help="multiply per-property trial counts")
    p.add_argument("--export-weights", type=str, default=None,
                   help="write a seeded random weight in the KCPW1 format")
    p.add_argument("--import-weights", type=str, default=None,
                   help="load a KCPW1 file and check it against the dense oracle")
    p.add_argument("--shape-in", type=_parse_ints, default=(8, 20, 20, 18))
    p.add_argument("--shape-out", type=_parse_ints, default=(4, 4, 4, 4))
    p.add_argument("--ranks", type=_parse_ints, default=(4, 4, 2),
                   help="K,CA,CB for --export-weights")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("tables", parents=[common],
                       help="benchmark parameter counts against published values")
    p.set_defaults(fn=cmd_tables)

    p = sub.add_parser("curves", parents=[common], help="rank-sweep comparison curves")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--P", type=int, default=2)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--r-min", type=int, default=1)
    p.add_argument("--r-max", type=int, default=32)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(fn=cmd_curves)

    p = sub.add_parser("timing", parents=[common], help="serial vs parallel wall clock")
    p.add_argument("--c-grid", type=_parse_ints, default=None,
                   help=f"rank sweep, default {','.join(map(str, DEFAULT_C_GRID))}")
    p.add_argument("--repeats", type=int, default=5, help="best-of repeats per point")
    p.add_argument("--shape-in", type=_parse_ints, default=None)
    p.add_argument("--shape-out", type=_parse_ints, default=None)
    p.add_argument("--ranks", type=_parse_ints, default=(4, 1, 1),
                   help="K,CA,CB; only K is used (CA=CB follow the sweep)")
    p.add_argument("--mem-limit", type=float, default=2.0,
                   help="GB budget; oversized sweep points are skipped")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(fn=cmd_timing)

    p = sub.add_parser("train-toy", parents=[common],
                       help="train the small compressed cell on the sign task")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--sharing", action="store_true")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(fn=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
