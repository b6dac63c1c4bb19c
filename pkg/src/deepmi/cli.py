"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen, gradcheck, infometrics
from .grid import GridError, atomic_write_bytes, format_csv, load_pgm
from .optim import DEFAULT_MULTISTART, OptimConfig, align
from .warp import Pose2

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("deepmi")


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, Pose2):
        return [obj.tx, obj.theta]
    return str(obj)


def write_run_manifest(path, command: str, args: argparse.Namespace, outputs) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [str(p) for p in outputs],
    }
    atomic_write_bytes(path, (json.dumps(manifest, indent=2, default=_jsonable) + "\n").encode("utf-8"))


def _int_list(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _multistart(text: str):
    if text == "grid":
        return DEFAULT_MULTISTART
    if text == "identity":
        return (Pose2(0.0, 0.0),)
    poses = []
    try:
        for item in text.split(";"):
            tx, th = item.split(",")
            poses.append(Pose2(float(tx), float(th)))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--multistart expects 'grid', 'identity' or 'tx,theta;tx,theta;...', got {text!r}") from None
    return tuple(poses)


def _load_pair(a, b):
    ga, gb = load_pgm(a), load_pgm(b)
    if ga.shape != gb.shape:
        raise UsageError(f"shape mismatch: {a} is {ga.width}x{ga.height}, {b} is {gb.width}x{gb.height}")
    return ga, gb


def _config_from(args) -> OptimConfig:
    return OptimConfig(
        algorithm=args.optimizer,
        learning_rate=args.lr,
        max_iters=args.iters,
        loss=args.loss,
        bins=args.bins,
        multistart=args.multistart,
        pyramid_levels=args.pyramid_levels,
    )


def cmd_gen(args) -> int:
    out = Path(args.out)
    datagen.gen_dataset(args.count, args.seed, out, style=args.style)
    write_run_manifest(out / "run.json", "gen", args, [out / "manifest.csv", out / "dataset.json"])
    print(f"wrote {args.count} pairs to {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    a, b = _load_pair(args.img_a, args.img_b)
    if args.loss == "mi":
        value = infometrics.mi_pair(a, b, args.bins).value
    else:
        value = infometrics.evaluate(args.loss, a, b, args.bins).value
    if args.dump_hist:
        joint = infometrics.pair_joint(a, b, args.bins)
        atomic_write_bytes(args.dump_hist, format_csv(joint.counts).encode("ascii"))
        write_run_manifest(Path(args.dump_hist).with_suffix(".run.json"), "score", args, [args.dump_hist])
    print(f"{args.loss},{value:.6f}")
    return EXIT_OK


def cmd_align(args) -> int:
    src, tgt = _load_pair(args.src, args.tgt)
    pose, trace = align(src, tgt, _config_from(args))
    print(f"{pose.tx:.3f},{pose.theta:.3f},{trace.final_loss:.6f}")
    if args.trace:
        atomic_write_bytes(args.trace, trace.to_csv().encode("ascii"))
        write_run_manifest(Path(args.trace).with_suffix(".run.json"), "align", args, [args.trace])
    return EXIT_OK


def sweep_bins(rows, bins_list, base_config: OptimConfig, loader=load_pgm, progress=None):
    """Alignment MAE over dataset rows for each bin count.

    Returns a list of ``(N, mae_tx, mae_theta)``.
    """
    pairs = [(loader(r["src"]), loader(r["tgt"]), r["tx"], r["theta"]) for r in rows]
    table = []
    for N in bins_list:
        cfg = replace(base_config, bins=N)
        err = np.array([[abs(p.tx - tx), abs(p.theta - th)]
                        for s, t, tx, th in pairs
                        for p in [align(s, t, cfg)[0]]])
        table.append((N, float(err[:, 0].mean()), float(err[:, 1].mean())))
        if progress:
            progress(table[-1])
    return table


def cmd_sweep_bins(args) -> int:
    d = Path(args.dataset_dir)
    manifest = d / "manifest.csv"
    if not manifest.is_file():
        raise UsageError(f"{d} has no manifest.csv")
    rows = datagen.read_manifest(manifest)
    if args.limit:
        rows = rows[:args.limit]
    if not rows:
        raise UsageError(f"{d} contains no samples")
    cfg = _config_from(args)
    table = sweep_bins(rows, args.bins_list, cfg,
                       progress=lambda r: log.info("N=%d mae_tx=%.4f mae_theta=%.4f", *r))
    text = format_csv(table, header=["N", "mae_tx", "mae_theta"], fmt="%.6g")
    sys.stdout.write(text)
    if args.out:
        atomic_write_bytes(args.out, text.encode("ascii"))
        write_run_manifest(Path(args.out).with_suffix(".run.json"), "sweep-bins", args, [args.out])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rep = gradcheck.run_checks(args.op, args.trials, args.seed, bins=args.bins_list, size=args.size)
    abs_tol, rel_tol = gradcheck.TOLERANCES[args.op]
    print(rep.table(f"gradcheck {args.op}: trials={args.trials} abs_tol={abs_tol:g} rel_tol={rel_tol:g}"))
    if args.csv:
        atomic_write_bytes(args.csv, rep.to_csv().encode("ascii"))
        write_run_manifest(Path(args.csv).with_suffix(".run.json"), "gradcheck", args, [args.csv])
    return EXIT_OK if rep.passed else EXIT_FAIL


def _add_align_flags(p, default_loss="lmi"):
    p.add_argument("--loss", choices=infometrics.LOSSES, default=default_loss)
    p.add_argument("--bins", type=int, default=11)
    p.add_argument("--optimizer", choices=("adam", "gd"), default="adam")
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--multistart", type=_multistart, default=DEFAULT_MULTISTART,
                   help="'grid' (5x5 default), 'identity', or 'tx,theta;tx,theta;...'")
    p.add_argument("--pyramid-levels", type=int, default=4,
                   help="coarse-to-fine levels (capped so the coarsest side stays >= 16 px)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepmi", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate bar-alignment pairs")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--style", choices=datagen.STYLES, default="binary")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("score", help="similarity between two PGM images")
    p.add_argument("img_a")
    p.add_argument("img_b")
    p.add_argument("--loss", choices=infometrics.LOSSES, default="lmi")
    p.add_argument("--bins", type=int, default=11)
    p.add_argument("--dump-hist", help="write the normalized joint histogram as CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("align", help="recover (tx, theta) warping SRC onto TGT")
    p.add_argument("src")
    p.add_argument("tgt")
    _add_align_flags(p)
    p.add_argument("--trace", help="write per-iteration trace CSV")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("sweep-bins", help="alignment MAE per bin count over a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--bins-list", type=_int_list, default=[3, 11, 15, 25])
    _add_align_flags(p)
    p.add_argument("--limit", type=int, default=0, help="use only the first LIMIT pairs")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_sweep_bins)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--op", choices=gradcheck.OPS, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins-list", type=_int_list, default=[3, 11, 25])
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"deepmi {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridError, OSError, ValueError) as exc:
        print(f"deepmi {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
