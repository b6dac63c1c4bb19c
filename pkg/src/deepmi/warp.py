"""Differentiable 2-DoF rigid warp (horizontal shift + in-plane rotation).

The warp is an inverse mapping: every output pixel ``p`` reads the source at

    s = c + R(-theta) (p - c - (tx, 0))

with ``c`` the image centre, using bilinear interpolation and zero outside the
source. Positive ``tx`` moves content right, positive ``theta`` (degrees)
rotates it counter-clockwise as displayed (rows pointing down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import Grid


class PoseError(ValueError):
    pass


@dataclass(frozen=True)
class Pose2:
    tx: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.tx) and math.isfinite(self.theta)):
            raise PoseError(f"non-finite pose {self}")
        if abs(self.theta) >= 180.0:
            raise PoseError(f"|theta| must be < 180 degrees, got {self.theta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.theta], dtype=np.float64)

    @classmethod
    def from_array(cls, p) -> "Pose2":
        return cls(float(p[0]), float(p[1]))


def _check_pose(grid: Grid, pose: Pose2):
    if abs(pose.tx) > grid.width:
        raise PoseError(f"|tx|={abs(pose.tx)} exceeds image width {grid.width}")


def warp_rigid(src: Grid, pose: Pose2) -> Grid:
    _check_pose(src, pose)
    return src.replace(_kernels.warp_forward(src.data, pose.tx, math.radians(pose.theta)))


def warp_backward(src: Grid, pose: Pose2, dL_dout) -> tuple[float, float]:
    """Gradient of a loss w.r.t. ``(tx, theta)`` given ``dL/d(warped image)``.

    Differentiates the bilinear taps with respect to the sampling point and
    chains through the rigid map. ``theta`` is in degrees, so the rotation
    term carries a pi/180 factor.
    """
    g = np.ascontiguousarray(dL_dout, dtype=np.float64)
    if g.shape != src.shape:
        raise PoseError(f"gradient shape {g.shape} does not match image {src.shape}")
    _check_pose(src, pose)
    d_tx, d_rad = _kernels.warp_backward(src.data, pose.tx, math.radians(pose.theta), g)
    return d_tx, d_rad * math.pi / 180.0


def downsample2(grid: Grid) -> Grid:
    """2x2 block average; a trailing odd row/column is dropped."""
    h, w = grid.height // 2 * 2, grid.width // 2 * 2
    d = grid.data[:h, :w]
    out = 0.25 * (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2])
    return grid.replace(out)
