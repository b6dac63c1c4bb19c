"""Compiled inner loops for the warp and the fuzzy joint histogram.

These run once per optimizer iteration over every pixel, so they are fused
into single passes. Semantics match the documented public functions exactly.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _bin(v, lo, scale, N):
    b = (v - lo) * scale
    if b < 0.0:
        b = 0.0
    elif b > N - 1:
        b = float(N - 1)
    i0 = int(math.floor(b))
    i1 = i0 + 1 if i0 < N - 1 else N - 1
    m1 = b - i0
    return i0, i1, 1.0 - m1, m1


@numba.njit(cache=True)
def joint_hist(x, y, lo, hi, N):
    counts = np.zeros((N, N))
    scale = N / (hi - lo)
    for k in range(x.size):
        i0, i1, mx0, mx1 = _bin(x[k], lo, scale, N)
        j0, j1, my0, my1 = _bin(y[k], lo, scale, N)
        counts[i0, j0] += mx0 * my0
        counts[i1, j0] += mx1 * my0
        counts[i0, j1] += mx0 * my1
        counts[i1, j1] += mx1 * my1
    return counts


@numba.njit(cache=True)
def joint_backward(g, x, y, lo, hi, N, total):
    dy = np.empty(y.size)
    scale = N / (hi - lo)
    s = scale / total
    for k in range(y.size):
        i0, i1, mx0, mx1 = _bin(x[k], lo, scale, N)
        j0, j1, my0, my1 = _bin(y[k], lo, scale, N)
        dy[k] = (mx0 * (g[i0, j1] - g[i0, j0]) + mx1 * (g[i1, j1] - g[i1, j0])) * s
    return dy


@numba.njit(cache=True, inline="always")
def _tap(img, yy, xx):
    h, w = img.shape
    if xx < 0 or xx >= w or yy < 0 or yy >= h:
        return 0.0
    return img[yy, xx]


@numba.njit(cache=True)
def warp_forward(img, tx, theta):
    h, w = img.shape
    cu = (w - 1) / 2.0
    cv = (h - 1) / 2.0
    c = math.cos(theta)
    s = math.sin(theta)
    out = np.empty((h, w))
    for v in range(h):
        b = v - cv
        for u in range(w):
            a = u - cu - tx
            su = cu + c * a - s * b
            sv = cv + s * a + c * b
            fu = math.floor(su)
            fv = math.floor(sv)
            fx = su - fu
            fy = sv - fv
            x0 = int(fu)
            y0 = int(fv)
            v00 = _tap(img, y0, x0)
            v01 = _tap(img, y0, x0 + 1)
            v10 = _tap(img, y0 + 1, x0)
            v11 = _tap(img, y0 + 1, x0 + 1)
            out[v, u] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    return out


@numba.njit(cache=True)
def warp_backward(img, tx, theta, g):
    h, w = img.shape
    cu = (w - 1) / 2.0
    cv = (h - 1) / 2.0
    c = math.cos(theta)
    s = math.sin(theta)
    d_tx = 0.0
    d_rad = 0.0
    for v in range(h):
        b = v - cv
        for u in range(w):
            gk = g[v, u]
            if gk == 0.0:
                continue
            a = u - cu - tx
            su = cu + c * a - s * b
            sv = cv + s * a + c * b
            fu = math.floor(su)
            fv = math.floor(sv)
            fx = su - fu
            fy = sv - fv
            x0 = int(fu)
            y0 = int(fv)
            v00 = _tap(img, y0, x0)
            v01 = _tap(img, y0, x0 + 1)
            v10 = _tap(img, y0 + 1, x0)
            v11 = _tap(img, y0 + 1, x0 + 1)
            gu = gk * ((1 - fy) * (v01 - v00) + fy * (v11 - v10))
            gv = gk * ((1 - fx) * (v10 - v00) + fx * (v11 - v01))
            d_tx -= gu * c + gv * s
            d_rad += gu * (-s * a - c * b) + gv * (c * a - s * b)
    return d_tx, d_rad
