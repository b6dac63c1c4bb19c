"""Synthetic bar-alignment pairs.

A white 50x125 bar on a black 192x640 canvas is warped by a random
``(tx, theta)`` drawn from a seeded ``numpy.random.PCG64`` stream. The binary
style re-thresholds the warped target; the ``gray`` style fills the bar with a
horizontal intensity ramp and keeps the interpolated target as is.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, atomic_write_bytes, save_pgm
from .warp import Pose2, warp_rigid

IMAGE_HEIGHT, IMAGE_WIDTH = 192, 640
BAR_HEIGHT, BAR_WIDTH = 50, 125
TX_RANGE = (-100.0, 100.0)
THETA_RANGE = (-40.0, 40.0)
THRESHOLD = 127.5
GRAY_RAMP = (40.0, 250.0)
PRNG_NAME = "numpy.random.PCG64"
STYLES = ("binary", "gray")
MANIFEST_HEADER = "index,src,tgt,tx,theta,seed"


@dataclass(frozen=True)
class BarSample:
    source: Grid
    target: Grid
    gt_pose: Pose2
    seed: int


def bar_image(style: str = "binary") -> Grid:
    img = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH))
    r0 = (IMAGE_HEIGHT - BAR_HEIGHT) // 2
    c0 = (IMAGE_WIDTH - BAR_WIDTH) // 2
    if style == "binary":
        img[r0:r0 + BAR_HEIGHT, c0:c0 + BAR_WIDTH] = 255.0
    elif style == "gray":
        img[r0:r0 + BAR_HEIGHT, c0:c0 + BAR_WIDTH] = np.linspace(*GRAY_RAMP, BAR_WIDTH)[None, :]
    else:
        raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
    return Grid(img, 0.0, 255.0)


def draw_pose(seed: int, tx_range=TX_RANGE, theta_range=THETA_RANGE) -> Pose2:
    rng = np.random.Generator(np.random.PCG64(seed))
    tx = rng.uniform(*tx_range) if tx_range[1] > tx_range[0] else float(tx_range[0])
    th = rng.uniform(*theta_range) if theta_range[1] > theta_range[0] else float(theta_range[0])
    return Pose2(float(tx), float(th))


def gen_bar_pair(seed: int, style: str = "binary", tx_range=TX_RANGE, theta_range=THETA_RANGE) -> BarSample:
    source = bar_image(style)
    pose = draw_pose(seed, tx_range, theta_range)
    warped = warp_rigid(source, pose)
    if style == "binary":
        warped = warped.replace(np.where(warped.data >= THRESHOLD, 255.0, 0.0))
    return BarSample(source, warped, pose, int(seed))


def gen_dataset(count: int, base_seed: int, out_dir, style: str = "binary") -> list:
    """Write ``count`` pairs as PGM files plus ``manifest.csv`` and ``dataset.json``.

    Sample ``i`` uses seed ``base_seed + i``. Returns the manifest rows.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        s = gen_bar_pair(base_seed + i, style)
        src, tgt = f"{i:05d}_src.pgm", f"{i:05d}_tgt.pgm"
        save_pgm(s.source, out / src)
        save_pgm(s.target, out / tgt)
        rows.append((i, src, tgt, s.gt_pose.tx, s.gt_pose.theta, s.seed))
    lines = [MANIFEST_HEADER] + [f"{i},{a},{b},{tx:.17g},{th:.17g},{sd}" for i, a, b, tx, th, sd in rows]
    atomic_write_bytes(out / "manifest.csv", ("\n".join(lines) + "\n").encode("ascii"))
    meta = {
        "prng": PRNG_NAME,
        "base_seed": base_seed,
        "count": count,
        "style": style,
        "image_size": [IMAGE_HEIGHT, IMAGE_WIDTH],
        "bar_size": [BAR_HEIGHT, BAR_WIDTH],
        "tx_range": list(TX_RANGE),
        "theta_range": list(THETA_RANGE),
        "seed_rule": "base_seed + index",
    }
    atomic_write_bytes(out / "dataset.json", (json.dumps(meta, indent=2) + "\n").encode("ascii"))
    return rows


def read_manifest(path) -> list:
    """Parse ``manifest.csv``; returns dicts with typed fields."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER.split(","):
            raise ValueError(f"{path}: unexpected manifest header {reader.fieldnames}")
        return [
            {"index": int(r["index"]), "src": path.parent / r["src"], "tgt": path.parent / r["tgt"],
             "tx": float(r["tx"]), "theta": float(r["theta"]), "seed": int(r["seed"])}
            for r in reader
        ]
