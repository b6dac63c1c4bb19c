"""Pose optimization: Adam / gradient descent, multistart alignment and a
brute-force grid-search oracle.

Alignment minimizes ``loss(target, warp(source, pose))`` directly over the
2-DoF pose. An optional image pyramid runs the multistart stage on
block-averaged copies and refines the winner level by level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import infometrics
from .grid import Grid, format_csv
from .warp import Pose2, PoseError, downsample2, warp_backward, warp_rigid

log = logging.getLogger(__name__)

ALGORITHMS = ("gd", "adam")
LR_POLICIES = ("fixed", "poly")

DEFAULT_MULTISTART = tuple(
    Pose2(tx, th) for tx in (-80.0, -40.0, 0.0, 40.0, 80.0) for th in (-30.0, -15.0, 0.0, 15.0, 30.0)
)


class OptimError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    algorithm: str = "adam"
    learning_rate: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    max_iters: int = 200
    loss: str = "lmi"
    bins: int = 11
    multistart: Sequence[Pose2] = DEFAULT_MULTISTART
    convergence_tol: float = 1e-7
    patience: int = 10
    lr_policy: str = "poly"
    lr_power: float = 0.9
    pyramid_levels: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise OptimError(f"unknown algorithm {self.algorithm!r}")
        if self.loss not in infometrics.LOSSES:
            raise OptimError(f"unknown loss {self.loss!r}")
        if self.lr_policy not in LR_POLICIES:
            raise OptimError(f"unknown lr policy {self.lr_policy!r}")
        if not self.learning_rate > 0:
            raise OptimError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise OptimError("betas must lie in [0, 1)")
        if self.max_iters < 1:
            raise OptimError("max_iters must be >= 1")
        if self.bins < 2:
            raise OptimError("bins must be >= 2")
        if self.pyramid_levels < 1:
            raise OptimError("pyramid_levels must be >= 1")
        if len(self.multistart) == 0:
            raise OptimError("multistart needs at least one initial pose")

    def lr_at(self, it: int, max_iters: Optional[int] = None) -> float:
        if self.lr_policy == "fixed":
            return self.learning_rate
        n = max_iters or self.max_iters
        return self.learning_rate * (1.0 - it / n) ** self.lr_power


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def _check_grad(grad):
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise OptimError("non-finite gradient")
    return g


def gd_step(params, grad, lr: float) -> np.ndarray:
    return np.asarray(params, dtype=np.float64) - lr * _check_grad(grad)


def adam_step(params, grad, state: AdamState, config: OptimConfig, lr: Optional[float] = None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    g = _check_grad(grad)
    lr = config.learning_rate if lr is None else lr
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * g
    v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1 ** t)
    v_hat = v / (1 - config.beta2 ** t)
    new = np.asarray(params, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new, AdamState(m, v, t)


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    pose: Pose2
    loss: float
    grad: tuple


@dataclass
class StartResult:
    start_index: int
    initial_pose: Pose2
    final_pose: Pose2
    initial_loss: float
    final_loss: float
    converged: bool
    diverged: bool = False
    message: str = ""


@dataclass
class AlignmentTrace:
    """Records of the winning run at full resolution plus a per-start summary."""

    records: List[IterRecord] = field(default_factory=list)
    final_pose: Pose2 = Pose2()
    final_loss: float = math.inf
    converged: bool = False
    starts: List[StartResult] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = [(r.iteration, r.pose.tx, r.pose.theta, r.loss, r.grad[0], r.grad[1]) for r in self.records]
        header = ["iter", "tx", "theta", "loss", "grad_tx", "grad_theta"]
        if not rows:
            return ",".join(header) + "\n"
        return format_csv(rows, header=header)


def loss_and_pose_grad(source: Grid, target: Grid, pose: Pose2, config: OptimConfig):
    warped = warp_rigid(source, pose)
    rep = infometrics.evaluate(config.loss, target, warped, config.bins)
    g = warp_backward(source, pose, rep.grad_wrt_prediction)
    return rep.value, np.array(g)


def loss_value(loss: str, source: Grid, target: Grid, pose: Pose2, bins: int) -> float:
    """Forward-only loss of ``warp(source, pose)`` against ``target``."""
    warped = warp_rigid(source, pose)
    if loss == "lmi":
        return infometrics.lmi(infometrics.pair_joint(target, warped, bins))
    return infometrics.evaluate(loss, target, warped, bins).value


def _clip_pose(p: np.ndarray, width: int) -> np.ndarray:
    # keep the iterate inside the Pose2 invariants
    return np.array([np.clip(p[0], -width, width), np.clip(p[1], -179.0, 179.0)])


def _descend(source: Grid, target: Grid, start: np.ndarray, config: OptimConfig, records=None):
    """Run one local optimization. Returns (best_params, best_loss, initial_loss, converged).

    The best iterate seen is returned, so the result never exceeds the
    starting loss.
    """
    p = np.array(start, dtype=np.float64)
    state = AdamState.zeros(2)
    best_p, best_loss, init_loss = p.copy(), math.inf, None
    prev, calm, converged = None, 0, False
    for it in range(config.max_iters):
        pose = Pose2.from_array(p)
        value, grad = loss_and_pose_grad(source, target, pose, config)
        if not math.isfinite(value):
            raise OptimError(f"non-finite loss at iteration {it}")
        if records is not None:
            records.append(IterRecord(it, pose, value, (float(grad[0]), float(grad[1]))))
        if init_loss is None:
            init_loss = value
        if value < best_loss:
            best_p, best_loss = p.copy(), value
        if prev is not None and abs(value - prev) < config.convergence_tol:
            calm += 1
            if calm >= config.patience:
                converged = True
                break
        else:
            calm = 0
        prev = value
        if not np.any(grad):
            converged = True
            break
        lr = config.lr_at(it)
        if config.algorithm == "adam":
            p, state = adam_step(p, grad, state, config, lr)
        else:
            p = gd_step(p, grad, lr)
        p = _clip_pose(p, source.width)
    return best_p, best_loss, init_loss, converged


def _pyramid(grid: Grid, levels: int) -> List[Grid]:
    out = [grid]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


MIN_PYRAMID_SIDE = 16


def effective_levels(shape, requested: int) -> int:
    """Cap pyramid depth so the coarsest image keeps both sides >= 16 px."""
    levels = 1
    h, w = shape
    while levels < requested and min(h, w) // 2 >= MIN_PYRAMID_SIDE:
        h, w = h // 2, w // 2
        levels += 1
    return levels


def align(source: Grid, target: Grid, config: OptimConfig = OptimConfig()):
    """Find the pose that warps ``source`` onto ``target``.

    Every start in ``config.multistart`` is optimized on the coarsest pyramid
    level; the lowest-loss result is then refined on each finer level. With
    ``pyramid_levels=1`` all starts run at full resolution.

    Returns
    -------
    pose : Pose2
    trace : AlignmentTrace
    """
    if source.shape != target.shape:
        raise OptimError(f"shape mismatch: {source.shape} vs {target.shape}")
    levels = effective_levels(source.shape, config.pyramid_levels)
    srcs, tgts = _pyramid(source, levels), _pyramid(target, levels)
    coarse = levels - 1
    k = 2.0 ** coarse
    trace = AlignmentTrace()

    best = None
    for i, start in enumerate(config.multistart):
        p0 = np.array([start.tx / k, start.theta])
        rec = [] if coarse == 0 else None
        try:
            p, loss, init, conv = _descend(srcs[coarse], tgts[coarse], p0, config, rec)
        except (OptimError, PoseError) as exc:
            log.warning("start %d (%s) diverged: %s", i, start, exc)
            trace.starts.append(StartResult(i, start, start, math.nan, math.nan, False, True, str(exc)))
            continue
        res = StartResult(i, start, Pose2(p[0] * k, p[1]), init, loss, conv)
        trace.starts.append(res)
        if best is None or loss < best[0].final_loss:
            best = (res, p, rec)
    if best is None:
        raise OptimError("all starts diverged")

    res, p, rec = best
    converged = res.converged
    for level in range(coarse - 1, -1, -1):
        p = np.array([p[0] * 2.0, p[1]])
        rec = [] if level == 0 else None
        p, loss, _, converged = _descend(srcs[level], tgts[level], p, config, rec)
    pose = Pose2.from_array(p)
    final_loss = loss_value(config.loss, source, target, pose, config.bins) if coarse else res.final_loss

    if coarse:
        # a refined pose must not lose to any raw start at full resolution
        for start in config.multistart:
            try:
                v = loss_value(config.loss, source, target, start, config.bins)
            except PoseError:
                continue
            if v < final_loss:
                pose, final_loss, converged = start, v, False

    trace.records = rec or []
    trace.final_pose = pose
    trace.final_loss = final_loss
    trace.converged = converged
    return pose, trace


def _axis(axis) -> np.ndarray:
    lo, hi, step = (float(v) for v in axis)
    if not step > 0 or hi < lo:
        raise OptimError(f"empty grid axis {axis}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


@dataclass
class LossSurface:
    tx: np.ndarray
    theta: np.ndarray
    values: np.ndarray  # rows follow tx, columns follow theta

    def to_csv(self) -> str:
        return format_csv(self.values)


def grid_search_oracle(source: Grid, target: Grid, loss: str, tx_range, theta_range, bins: int = 11):
    """Exhaustive loss evaluation over a Cartesian (tx, theta) grid.

    Ties are broken by smallest ``|tx|`` and then smallest ``|theta|``.
    Returns ``(pose, LossSurface)``.
    """
    txs, ths = _axis(tx_range), _axis(theta_range)
    values = np.empty((txs.size, ths.size))
    for i, tx in enumerate(txs):
        for j, th in enumerate(ths):
            values[i, j] = loss_value(loss, source, target, Pose2(tx, th), bins)
    if not np.all(np.isfinite(values)):
        raise OptimError("non-finite loss on the search grid")
    vmin = values.min()
    ii, jj = np.nonzero(values == vmin)
    i, j = min(zip(ii, jj), key=lambda ij: (abs(txs[ij[0]]), abs(ths[ij[1]])))
    return Pose2(float(txs[i]), float(ths[j])), LossSurface(txs, ths, values)


def with_overrides(config: OptimConfig, **kwargs) -> OptimConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
