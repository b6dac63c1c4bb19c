"""Central finite-difference checks for every differentiable operation.

``finite_diff`` and ``compare`` are generic; the ``check_*`` functions build
random problems for one operation each, mask the coordinates where the loss
has a kink (computed from the forward pass), and aggregate a
:class:`GradReport` over all trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import infometrics
from .grid import Grid, format_csv
from .softhist import fuzzy_bins, kink_mask, marginals_from_joint, normalize, soft_hist_2d
from .warp import Pose2, warp_backward, warp_rigid

PIXEL_STEP = 1e-3
POSE_STEPS = (1e-3, 1e-3)
# central differences are exact for quadratics, so L2 uses the largest step
# that keeps each sample in range (capped), which keeps cancellation error
# far below its tolerance
PIXEL_STEPS = {"lmi": PIXEL_STEP, "ssim": PIXEL_STEP, "l1": PIXEL_STEP}
L2_MAX_STEP = 32.0

# (abs_tol, rel_tol) per operation
TOLERANCES = {
    "lmi": (1e-12, 1e-4),
    "ssim": (1e-12, 1e-5),
    "l1": (1e-12, 1e-8),
    "l2": (1e-12, 1e-8),
    "warp": (1e-9, 1e-4),
}
OPS = tuple(TOLERANCES)


class GradCheckError(ValueError):
    pass


@dataclass
class GradReport:
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    worst_coordinate: int = -1
    num_checked: int = 0
    num_skipped_kinks: int = 0
    num_failed: int = 0

    @property
    def total(self) -> int:
        return self.num_checked + self.num_skipped_kinks

    @property
    def skipped_fraction(self) -> float:
        return self.num_skipped_kinks / self.total if self.total else 0.0

    @property
    def passed(self) -> bool:
        return self.num_failed == 0

    def merge(self, other: "GradReport", offset: int = 0) -> "GradReport":
        worst = self.worst_coordinate
        if other.max_rel_error > self.max_rel_error or (
                other.max_rel_error == self.max_rel_error and other.max_abs_error > self.max_abs_error):
            worst = other.worst_coordinate + offset
        return GradReport(
            max(self.max_abs_error, other.max_abs_error),
            max(self.max_rel_error, other.max_rel_error),
            worst,
            self.num_checked + other.num_checked,
            self.num_skipped_kinks + other.num_skipped_kinks,
            self.num_failed + other.num_failed,
        )

    FIELDS = ("max_abs_error", "max_rel_error", "worst_coordinate", "num_checked",
              "num_skipped_kinks", "num_failed", "passed")

    def as_row(self):
        return (self.max_abs_error, self.max_rel_error, self.worst_coordinate, self.num_checked,
                self.num_skipped_kinks, self.num_failed, int(self.passed))

    def table(self, title: str = "") -> str:
        lines = [title] if title else []
        for name, val in zip(self.FIELDS, self.as_row()):
            txt = f"{val:.3e}" if isinstance(val, float) else str(val)
            lines.append(f"{name:<20s}{txt:>14s}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        return format_csv([self.as_row()], header=list(self.FIELDS), fmt="%.6g")


def finite_diff(loss_fn: Callable[[np.ndarray], float], point, step: float = PIXEL_STEP) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h``.

    ``step`` may be a scalar or one step per coordinate.
    """
    p = np.asarray(point, dtype=np.float64).ravel()
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), p.shape)
    if np.any(steps <= 0):
        raise GradCheckError("finite-difference step must be > 0")
    out = np.empty_like(p)
    for i in range(p.size):
        q = p.copy()
        q[i] = p[i] + steps[i]
        fp = loss_fn(q)
        q[i] = p[i] - steps[i]
        fm = loss_fn(q)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise GradCheckError(f"non-finite evaluation at coordinate {i}")
        out[i] = (fp - fm) / (2.0 * steps[i])
    return out


def compare(analytic, numeric, abs_tol: float, rel_tol: float, kink_mask=None) -> GradReport:
    """Per-coordinate check: passes if within ``abs_tol`` or within ``rel_tol``
    relative to ``max(|a|, |n|)``.

    The reported relative error uses ``max(|a|, |n|, abs_tol / rel_tol)`` as
    denominator, which makes "rel <= rel_tol" equivalent to the two-sided
    rule. Masked coordinates are skipped and counted, never failed.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise GradCheckError(f"length mismatch: {a.size} vs {n.size}")
    skip = np.zeros(a.shape, bool) if kink_mask is None else np.asarray(kink_mask, bool).ravel()
    diff = np.abs(a - n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_tol / rel_tol)
    rel = diff / denom
    ok = (diff <= abs_tol) | (rel <= rel_tol)
    checked = ~skip
    rep = GradReport(num_checked=int(checked.sum()), num_skipped_kinks=int(skip.sum()))
    if rep.num_checked:
        idx = np.flatnonzero(checked)
        rep.max_abs_error = float(diff[idx].max())
        rep.max_rel_error = float(rel[idx].max())
        rep.worst_coordinate = int(idx[np.argmax(rel[idx] + 1e-300 * diff[idx])])
        rep.num_failed = int((~ok[idx]).sum())
    return rep


# ---- per-operation checks ------------------------------------------------

def random_grid(rng, shape, smooth=False) -> Grid:
    if not smooth:
        return Grid(rng.uniform(1.0, 254.0, size=shape))
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros(shape)
    for _ in range(4):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(0.2, 0.4) * min(h, w)
        img += rng.uniform(60, 120) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return Grid(np.clip(img, 0, 255))


def lmi_kink_mask(x, y, N, value_range=(0.0, 255.0), frac_tol=1e-2, tie_tol=1e-6):
    """Pixels whose bin coordinate sits near a membership boundary, or whose
    corner cells include a diagonal cell with a sign tie in the LMI terms."""
    mask = kink_mask(y, value_range, N, frac_tol)
    joint = normalize(soft_hist_2d(x, y, N, value_range))
    px, py = (h.counts for h in marginals_from_joint(joint))
    d = np.diag(joint.counts)
    tie = (np.abs(d - px) < tie_tol) | (np.abs(d - py) < tie_tol)
    if tie.any():
        _, x0, x1, _, _ = fuzzy_bins(x, value_range, N)
        _, y0, y1, _, _ = fuzzy_bins(y, value_range, N)
        for xi in (x0, x1):
            for yj in (y0, y1):
                mask |= (xi == yj) & tie[xi]
    return mask


def _lmi_of(x, N, value_range):
    def f(yflat):
        return infometrics.lmi(normalize(soft_hist_2d(x, yflat, N, value_range)))
    return f


def check_lmi_pair(target: Grid, prediction: Grid, N: int, step=PIXEL_STEP) -> GradReport:
    abs_tol, rel_tol = TOLERANCES["lmi"]
    rep = infometrics.lmi_pair(target, prediction, N)
    x, y = target.data.ravel(), prediction.data.ravel()
    num = finite_diff(_lmi_of(x, N, target.value_range), y, step)
    mask = lmi_kink_mask(x, y, N, target.value_range)
    return compare(rep.grad_wrt_prediction, num, abs_tol, rel_tol, mask)


def _pixel_check(op, target: Grid, prediction: Grid, step=None) -> GradReport:
    abs_tol, rel_tol = TOLERANCES[op]
    if step is None and op == "l2":
        lo, hi = prediction.value_range
        y = prediction.data.ravel()
        step = np.clip(np.minimum(y - lo, hi - y), PIXEL_STEP, L2_MAX_STEP)
    elif step is None:
        step = PIXEL_STEPS[op]
    fn = {"ssim": infometrics.ssim_pair, "l1": infometrics.l1_pair, "l2": infometrics.l2_pair}[op]
    rep = fn(target, prediction)
    shape = target.shape

    def f(yflat):
        return fn(target, Grid(yflat.reshape(shape), clamp=False)).value

    num = finite_diff(f, prediction.data, step)
    mask = None
    if op == "l1":
        mask = np.abs(prediction.data - target.data).ravel() < 10 * step
    return compare(rep.grad_wrt_prediction, num, abs_tol, rel_tol, mask)


def _sample_cells(shape, pose: Pose2):
    h, w = shape
    cu, cv = (w - 1) / 2.0, (h - 1) / 2.0
    t = math.radians(pose.theta)
    a = (np.arange(w) - cu - pose.tx)[None, :]
    b = (np.arange(h) - cv)[:, None]
    su = cu + math.cos(t) * a - math.sin(t) * b
    sv = cv + math.sin(t) * a + math.cos(t) * b
    return np.floor(su), np.floor(sv)


def warp_cell_crossings(shape, pose: Pose2, steps=POSE_STEPS):
    """For each pose coordinate, the output pixels whose bilinear cell changes
    somewhere in ``[p - h, p + h]``. The warp is piecewise smooth per cell, so
    these are the only pixels whose contribution has a kink."""
    p = pose.as_array()
    masks = []
    for c, h in enumerate(steps):
        cells = []
        for sgn in (-1.0, 0.0, 1.0):
            q = p.copy()
            q[c] += sgn * h
            cells.append(_sample_cells(shape, Pose2.from_array(q)))
        (um, vm), (u0, v0), (up, vp) = cells
        masks.append((um != u0) | (up != u0) | (vm != v0) | (vp != v0))
    return masks


def check_warp(src: Grid, pose: Pose2, weights: np.ndarray, steps=POSE_STEPS) -> GradReport:
    """Gradient of ``sum(weights * warp(src, pose))`` with respect to the pose.

    Pixels that change bilinear cell within the finite-difference stencil of
    a coordinate get zero weight for that coordinate, in both the analytic
    and the numeric evaluation. A coordinate is reported as a skipped kink
    only if that exclusion would drop more than 5% of the weighted pixels.
    """
    abs_tol, rel_tol = TOLERANCES["warp"]
    weights = np.asarray(weights, dtype=np.float64)
    analytic, numeric, skip = np.empty(2), np.empty(2), np.zeros(2, bool)
    p0 = pose.as_array()
    for c, crossing in enumerate(warp_cell_crossings(src.shape, pose, steps)):
        wc = np.where(crossing, 0.0, weights)
        skip[c] = crossing[weights != 0].mean() > 0.05 if np.any(weights) else False
        analytic[c] = warp_backward(src, pose, wc)[c]
        h = steps[c]
        fp, fm = p0.copy(), p0.copy()
        fp[c] += h
        fm[c] -= h
        numeric[c] = (np.sum(wc * warp_rigid(src, Pose2.from_array(fp)).data)
                      - np.sum(wc * warp_rigid(src, Pose2.from_array(fm)).data)) / (2 * h)
    return compare(analytic, numeric, abs_tol, rel_tol, skip)


def run_checks(op: str, trials: int, seed: int = 0, bins=(3, 11, 25), size=16) -> GradReport:
    """Aggregate report over ``trials`` random problems for one operation.

    For ``lmi`` every trial is run once per bin count in ``bins``.
    """
    if op not in OPS:
        raise GradCheckError(f"unknown op {op!r}; expected one of {', '.join(OPS)}")
    rng = np.random.default_rng(seed)
    total = GradReport()
    offset = 0
    for _ in range(trials):
        if op == "warp":
            src = random_grid(rng, (2 * size, 2 * size), smooth=True)
            pose = Pose2(rng.uniform(-size / 2, size / 2), rng.uniform(-30, 30))
            weights = rng.normal(size=src.shape)
            rep = check_warp(src, pose, weights)
            total = total.merge(rep, offset)
            offset += 2
            continue
        t = random_grid(rng, (size, size))
        p = random_grid(rng, (size, size))
        if op == "lmi":
            for N in bins:
                total = total.merge(check_lmi_pair(t, p, N), offset)
                offset += t.data.size
        else:
            total = total.merge(_pixel_check(op, t, p), offset)
            offset += t.data.size
    return total
