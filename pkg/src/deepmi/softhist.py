"""Fuzzy (differentiable) 1-D and 2-D histograms.

Each observation is split between its two neighbouring bins with linear
memberships ``m0 = 1 - (xb - x0)`` and ``m1 = xb - x0`` so that the counts are
piecewise-linear in the observation. Joint histograms use the four products
``m_xi * m_yj``. The backward pass maps a gradient on the normalized joint pdf
back onto the individual samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


class HistogramError(ValueError):
    pass


class EmptyHistogram(HistogramError):
    pass


NORM_TOL = 1e-9


@dataclass(frozen=True)
class BinAssignment:
    xb: float
    x0: int
    x1: int
    m0: float
    m1: float


@dataclass(frozen=True)
class Histogram1D:
    counts: np.ndarray
    normalized: bool = False

    @property
    def bins(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class JointHistogram:
    """N x N histogram; rows index X bins, columns index Y bins."""

    counts: np.ndarray
    normalized: bool = False

    @property
    def bins(self) -> int:
        return self.counts.shape[0]


def _check_bins(N):
    if int(N) != N or N < 2:
        raise HistogramError(f"bin count must be an integer >= 2, got {N}")
    return int(N)


def _check_range(value_range):
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise HistogramError(f"degenerate range [{lo}, {hi}]")
    return lo, hi


def _check_inside(v, lo, hi):
    if v.size and (v.min() < lo or v.max() > hi):
        raise HistogramError(f"samples outside range [{lo}, {hi}]")


def fuzzy_bins(values, value_range, N):
    """Vectorized bin assignment.

    Returns ``(xb, x0, x1, m0, m1)`` arrays with the same shape as ``values``.
    ``xb`` is clamped to ``[0, N-1]``; at integral ``xb`` the upper neighbour
    gets zero membership.
    """
    N = _check_bins(N)
    lo, hi = _check_range(value_range)
    v = np.asarray(values, dtype=np.float64)
    _check_inside(v, lo, hi)
    xb = (v - lo) * (N / (hi - lo))
    np.clip(xb, 0.0, N - 1, out=xb)
    x0 = np.floor(xb).astype(np.intp)
    x1 = np.minimum(x0 + 1, N - 1)
    m1 = xb - x0
    m0 = 1.0 - m1
    return xb, x0, x1, m0, m1


def bin_coordinates(x, range_min, range_max, N) -> BinAssignment:
    xb, x0, x1, m0, m1 = fuzzy_bins(np.array([x], dtype=np.float64), (range_min, range_max), N)
    return BinAssignment(float(xb[0]), int(x0[0]), int(x1[0]), float(m0[0]), float(m1[0]))


def _samples(values, name):
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise HistogramError(f"{name} is empty")
    return v


def soft_hist_1d(samples, N, value_range) -> Histogram1D:
    v = _samples(samples, "samples")
    _, x0, x1, m0, m1 = fuzzy_bins(v, value_range, N)
    counts = np.bincount(x0, weights=m0, minlength=N) + np.bincount(x1, weights=m1, minlength=N)
    return Histogram1D(counts, normalized=False)


def soft_hist_2d(xs, ys, N, value_range) -> JointHistogram:
    """Unnormalized fuzzy joint histogram of paired samples (X rows, Y columns)."""
    x = _samples(xs, "xs")
    y = _samples(ys, "ys")
    if x.shape != y.shape:
        raise HistogramError(f"length mismatch: {x.size} vs {y.size}")
    N = _check_bins(N)
    lo, hi = _check_range(value_range)
    _check_inside(x, lo, hi)
    _check_inside(y, lo, hi)
    return JointHistogram(_kernels.joint_hist(x, y, lo, hi, N), normalized=False)


def normalize(hist):
    total = float(hist.counts.sum())
    if not total > 0.0:
        raise EmptyHistogram("histogram has zero total mass")
    if hist.normalized:
        return hist
    return type(hist)(hist.counts / total, normalized=True)


def is_normalized(hist) -> bool:
    return bool(hist.normalized and abs(hist.counts.sum() - 1.0) <= NORM_TOL)


def marginals_from_joint(joint: JointHistogram) -> tuple[Histogram1D, Histogram1D]:
    if not is_normalized(joint):
        raise HistogramError("marginals require a normalized joint histogram")
    return (Histogram1D(joint.counts.sum(axis=1), True),
            Histogram1D(joint.counts.sum(axis=0), True))


def backward_samples(dL_djoint, xs, ys, N, value_range, total_mass, wrt_x=False):
    """Per-sample gradients of a loss defined on the normalized joint pdf.

    Parameters
    ----------
    dL_djoint : (N, N) array
        Gradient of the loss with respect to the normalized joint pdf.
    xs, ys : array_like
        The paired samples the joint was built from.
    total_mass : float
        Normalizing constant (the pair count). Treated as a constant since
        memberships of each pair always sum to one.
    wrt_x : bool
        Also return the gradient with respect to ``xs``.

    Returns
    -------
    dy : ndarray, shaped like ``ys``
        ``dL/dy`` per sample; ``(dx, dy)`` when ``wrt_x`` is set.
    """
    g = np.asarray(dL_djoint, dtype=np.float64)
    N = _check_bins(N)
    if g.shape != (N, N):
        raise HistogramError(f"gradient shape {g.shape} does not match {N}x{N} bins")
    if not total_mass > 0:
        raise EmptyHistogram("zero total mass")
    lo, hi = _check_range(value_range)
    ys_arr = np.asarray(ys, dtype=np.float64)
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = ys_arr.ravel()
    if x.shape != y.shape:
        raise HistogramError(f"length mismatch: {x.size} vs {y.size}")
    _check_inside(x, lo, hi)
    _check_inside(y, lo, hi)
    # dm0/db = -1, dm1/db = +1 for each membership pair
    dy = _kernels.joint_backward(g, x, y, lo, hi, N, float(total_mass)).reshape(ys_arr.shape)
    if not wrt_x:
        return dy
    _, x0, x1, mx0, mx1 = fuzzy_bins(x, (lo, hi), N)
    _, y0, y1, my0, my1 = fuzzy_bins(y, (lo, hi), N)
    scale = (N / (hi - lo)) / total_mass
    dx = (my0 * (g[x1, y0] - g[x0, y0]) + my1 * (g[x1, y1] - g[x0, y1])) * scale
    return dx.reshape(np.shape(xs)), dy


def kink_mask(values, value_range, N, tol=1e-2):
    """True where a sample's bin coordinate is within ``tol`` of an integer,
    i.e. where the memberships have a kink."""
    N = _check_bins(N)
    lo, hi = _check_range(value_range)
    raw = (np.asarray(values, dtype=np.float64) - lo) * (N / (hi - lo))
    frac = raw - np.round(raw)
    return np.abs(frac) < tol
