"""Entropy, mutual information, the linearized MI loss and baseline image losses.

All pair losses take ``(target, prediction)`` and return a :class:`LossReport`
whose gradient is with respect to the prediction only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import Grid
from .softhist import (
    Histogram1D,
    JointHistogram,
    backward_samples,
    is_normalized,
    marginals_from_joint,
    normalize,
    soft_hist_2d,
)

MARGINAL_TOL = 1e-6
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LossReport:
    value: float
    grad_wrt_prediction: Optional[np.ndarray] = None


def _pdf_array(pdf) -> np.ndarray:
    if isinstance(pdf, (Histogram1D, JointHistogram)):
        if not is_normalized(pdf):
            raise MetricError("expected a normalized pdf")
        p = pdf.counts
    else:
        p = np.asarray(pdf, dtype=np.float64)
        if abs(p.sum() - 1.0) > 1e-9:
            raise MetricError("expected a normalized pdf")
    if np.any(p < 0):
        raise MetricError("pdf has negative entries")
    return p


def entropy(pdf) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = _pdf_array(pdf)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mutual_information(pX, pY, pXY) -> float:
    px, py, pxy = _pdf_array(pX), _pdf_array(pY), _pdf_array(pXY)
    if (np.max(np.abs(pxy.sum(axis=1) - px)) > MARGINAL_TOL
            or np.max(np.abs(pxy.sum(axis=0) - py)) > MARGINAL_TOL):
        raise MetricError("joint pdf is inconsistent with the given marginals")
    mi = entropy(px) + entropy(py) - entropy(pxy)
    if -1e-9 < mi < 0:
        mi = 0.0
    return mi


def _joint(pXY) -> JointHistogram:
    if isinstance(pXY, JointHistogram):
        joint = pXY
    else:
        joint = JointHistogram(np.asarray(pXY, dtype=np.float64), normalized=True)
    if not is_normalized(joint):
        raise MetricError("LMI requires a normalized joint pdf")
    return joint


def lmi(pXY) -> float:
    """Linearized mutual information loss of a normalized joint pdf.

    One third of: off-diagonal mass, plus the L1 gap between the diagonal and
    each (joint-derived) marginal. Zero iff the joint is diagonal.
    """
    joint = _joint(pXY)
    p = joint.counts
    px, py = (h.counts for h in marginals_from_joint(joint))
    diag = np.diag(p)
    trace = diag.sum()
    assert trace <= 1.0 + 1e-12, f"diagonal mass {trace} exceeds 1"
    off = p.sum(where=~np.eye(p.shape[0], dtype=bool))
    value = (off + np.abs(diag - px).sum() + np.abs(diag - py).sum()) / 3.0
    # normalization can leave the total mass an ulp above 1
    if 1.0 < value <= 1.0 + 1e-12:
        value = 1.0
    return float(value)


def lmi_grad_joint(pXY, grad_through_marginals=False) -> np.ndarray:
    """dLMI/dp_ij.

    By default the marginals are held constant: off-diagonal cells get 1/3,
    diagonal cells ``(sign(p_ii - pX_i) + sign(p_ii - pY_i)) / 3``.
    """
    joint = _joint(pXY)
    p = joint.counts
    N = p.shape[0]
    px, py = (h.counts for h in marginals_from_joint(joint))
    diag = np.diag(p)
    sx = np.sign(diag - px)
    sy = np.sign(diag - py)
    g = np.full((N, N), 1.0 / 3.0)
    g[np.diag_indices(N)] = (sx + sy) / 3.0
    if grad_through_marginals:
        # d pX_i / d p_ij = 1 for every j in row i; likewise columns for pY
        g -= sx[:, None] / 3.0
        g -= sy[None, :] / 3.0
    return g


def _check_pair(target: Grid, prediction: Grid):
    if target.shape != prediction.shape:
        raise MetricError(f"shape mismatch: {target.shape} vs {prediction.shape}")


def pair_joint(target: Grid, prediction: Grid, N: int) -> JointHistogram:
    """Normalized soft joint histogram with X = target and Y = prediction."""
    _check_pair(target, prediction)
    if target.value_range != prediction.value_range:
        raise MetricError("range mismatch between target and prediction")
    return normalize(soft_hist_2d(target.data, prediction.data, N, target.value_range))


def lmi_pair(target: Grid, prediction: Grid, N: int, grad_through_marginals=False) -> LossReport:
    joint = pair_joint(target, prediction, N)
    value = lmi(joint)
    g = lmi_grad_joint(joint, grad_through_marginals)
    grad = backward_samples(g, target.data, prediction.data, N, target.value_range,
                            total_mass=target.data.size)
    return LossReport(value, grad)


def mi_pair(target: Grid, prediction: Grid, N: int) -> LossReport:
    """Mutual information of the soft joint, with its gradient for maximization.

    The gradient flows through the joint including its derived marginals;
    empty cells are floored at 1e-12 to keep it finite.
    """
    joint = pair_joint(target, prediction, N)
    px, py = marginals_from_joint(joint)
    value = mutual_information(px, py, joint)
    p = joint.counts
    tiny = 1e-12
    g = (np.log(np.maximum(p, tiny))
         - np.log(np.maximum(px.counts, tiny))[:, None]
         - np.log(np.maximum(py.counts, tiny))[None, :])
    grad = backward_samples(g, target.data, prediction.data, N, target.value_range,
                            total_mass=target.data.size)
    return LossReport(value, grad)


def l1_pair(target: Grid, prediction: Grid) -> LossReport:
    _check_pair(target, prediction)
    d = prediction.data - target.data
    return LossReport(float(np.abs(d).mean()), np.sign(d) / d.size)


def l2_pair(target: Grid, prediction: Grid) -> LossReport:
    _check_pair(target, prediction)
    d = prediction.data - target.data
    return LossReport(float(np.mean(d * d)), 2.0 * d / d.size)


def box3(img: np.ndarray) -> np.ndarray:
    """Sum over every fully-contained 3x3 window; output is (h-2, w-2)."""
    h, w = img.shape
    out = np.zeros((h - 2, w - 2))
    for di in range(3):
        for dj in range(3):
            out += img[di:di + h - 2, dj:dj + w - 2]
    return out


def box3_adjoint(vals: np.ndarray) -> np.ndarray:
    """Transpose of :func:`box3`: scatter each window value onto its 9 pixels."""
    h, w = vals.shape[0] + 2, vals.shape[1] + 2
    out = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            out[di:di + h - 2, dj:dj + w - 2] += vals
    return out


def ssim_map(x: np.ndarray, y: np.ndarray):
    """Per-window SSIM with 3x3 uniform statistics.

    Returns the map together with the intermediate statistics needed by the
    backward pass.
    """
    mx, my = box3(x) / 9.0, box3(y) / 9.0
    sxx = box3(x * x) / 9.0 - mx * mx
    syy = box3(y * y) / 9.0 - my * my
    sxy = box3(x * y) / 9.0 - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2)


def ssim_pair(target: Grid, prediction: Grid) -> LossReport:
    _check_pair(target, prediction)
    if target.height < 3 or target.width < 3:
        raise MetricError("SSIM needs images at least 3x3")
    x, y = target.data, prediction.data
    s, (mx, my, a1, a2, b1, b2) = ssim_map(x, y)
    value = float(np.mean((1.0 - s) / 2.0))

    w = -0.5 / s.size
    # grouped so that every term cancels exactly when x == y (r1 = r2 = 1)
    r1, r2 = a1 / b1, a2 / b2
    ds_dmy = 2 * r2 * (mx - r1 * my) / b1
    # syy = E[y^2] - my^2, sxy = E[xy] - mx*my
    coef_const = w * (ds_dmy + 2 * r1 * (my * r2 - mx) / b2)
    grad = (box3_adjoint(coef_const)
            + 2 * (x * box3_adjoint(w * r1 / b2) - y * box3_adjoint(w * s / b2))) / 9.0
    return LossReport(value, grad)


LOSSES = ("l1", "l2", "ssim", "lmi", "mi")


def evaluate(loss: str, target: Grid, prediction: Grid, N: int = 11) -> LossReport:
    """Dispatch by loss name. ``mi`` reports -MI so that lower is better."""
    if loss == "lmi":
        return lmi_pair(target, prediction, N)
    if loss == "mi":
        r = mi_pair(target, prediction, N)
        return LossReport(-r.value, -r.grad_wrt_prediction)
    if loss == "l1":
        return l1_pair(target, prediction)
    if loss == "l2":
        return l2_pair(target, prediction)
    if loss == "ssim":
        return ssim_pair(target, prediction)
    raise MetricError(f"unknown loss {loss!r}; expected one of {', '.join(LOSSES)}")
