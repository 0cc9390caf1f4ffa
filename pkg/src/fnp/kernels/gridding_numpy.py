"""Pure-numpy reference backend for the point-set -> grid Gaussian scatter.

Semantics shared with the compiled backend (fnp.kernels._gridding):

Given n points at fractional grid coordinates (row, col), per-point per-channel
values y and presence mask m, and per-channel length scales ell (grid-cell
units, ell[0] for the density channel, ell[1 + c] for channel c), accumulate

    density[h, w] = sum_i k(d_i; ell[0])
    num[c, h, w]  = sum_{i: m_ic} k(d_i; ell[1+c]) * y_ic
    den[c, h, w]  = sum_{i: m_ic} k(d_i; ell[1+c])

with k(d; ell) = exp(-d^2 / (2 ell^2)) truncated to zero for d > CUTOFF * ell.
d is the Euclidean distance in grid-cell units; columns wrap when periodic.
The backward pass returns d(loss)/d(ell) given upstream gradients, using
dk/dell = k * d^2 / ell^3 (the moving truncation boundary is ignored; the
discarded terms are at the exp(-CUTOFF^2/2) ~ 1.5e-8 level).
"""
from __future__ import annotations

import numpy as np

#: Kernel support radius in length-scale units.  Contributions beyond this are
#: exactly zero in both backends.
CUTOFF = 6.0


def _window(center: float, n: int, cut: float, periodic: bool):
    """Integer index range [lo, hi] (unwrapped) within cut of center."""
    lo = int(np.ceil(center - cut))
    hi = int(np.floor(center + cut))
    if periodic:
        if hi - lo + 1 >= n:
            lo, hi = 0, n - 1
    else:
        lo, hi = max(lo, 0), min(hi, n - 1)
    return lo, hi


def _wrap_dc(dc: np.ndarray, W: int) -> np.ndarray:
    dc = dc % W
    dc = np.where(dc > 0.5 * W, dc - W, dc)
    return np.where(dc < -0.5 * W, dc + W, dc)


def _point_weights(r, c, H, W, ell, periodic, need_d2=False):
    """Truncated Gaussian stencil of one point for one length scale.

    Returns (row_idx, col_idx, w) with w shaped (rows, cols); optionally the
    squared distances as a fourth element.  The weight is computed separably,
    exp(-dr^2/2ell^2) * exp(-dc^2/2ell^2), matching the compiled backend.
    """
    cut = CUTOFF * ell
    rlo, rhi = _window(r, H, cut, periodic=False)
    if rlo > rhi:
        return None
    clo, chi = _window(c, W, cut, periodic)
    if clo > chi:
        return None
    rows = np.arange(rlo, rhi + 1)
    cols = np.arange(clo, chi + 1)
    inv2 = 0.5 / (ell * ell)
    dr = rows - r
    dc = cols - c
    if periodic:
        dc = _wrap_dc(dc, W)
    dr2 = dr * dr
    dc2 = dc * dc
    d2 = dr2[:, None] + dc2[None, :]
    w = np.exp(-dr2 * inv2)[:, None] * np.exp(-dc2 * inv2)[None, :]
    w[d2 > cut * cut] = 0.0
    col_idx = np.mod(cols, W) if periodic else cols
    if need_d2:
        return rows, col_idx, w, d2
    return rows, col_idx, w


def gridding_forward(rows, cols, values, mask, H, W, ell, periodic):
    """See module docstring.  All float inputs are float64."""
    n, C = values.shape
    density = np.zeros((H, W))
    num = np.zeros((C, H, W))
    den = np.zeros((C, H, W))
    for i in range(n):
        r, c = rows[i], cols[i]
        st = _point_weights(r, c, H, W, ell[0], periodic)
        if st is not None:
            ri, ci, w = st
            density[np.ix_(ri, ci)] += w
        for ch in range(C):
            if not mask[i, ch]:
                continue
            st = _point_weights(r, c, H, W, ell[1 + ch], periodic)
            if st is None:
                continue
            ri, ci, w = st
            num[ch][np.ix_(ri, ci)] += w * values[i, ch]
            den[ch][np.ix_(ri, ci)] += w
    return density, num, den


def gridding_backward(rows, cols, values, mask, H, W, ell, periodic, g_density, g_num, g_den):
    """Gradient of sum(g . outputs) with respect to ell, shaped like ell."""
    n, C = values.shape
    g_ell = np.zeros_like(ell)
    for i in range(n):
        r, c = rows[i], cols[i]
        st = _point_weights(r, c, H, W, ell[0], periodic, need_d2=True)
        if st is not None:
            ri, ci, w, d2 = st
            g_ell[0] += np.sum(g_density[np.ix_(ri, ci)] * w * d2) / ell[0] ** 3
        for ch in range(C):
            if not mask[i, ch]:
                continue
            st = _point_weights(r, c, H, W, ell[1 + ch], periodic, need_d2=True)
            if st is None:
                continue
            ri, ci, w, d2 = st
            upstream = g_num[ch][np.ix_(ri, ci)] * values[i, ch] + g_den[ch][np.ix_(ri, ci)]
            g_ell[1 + ch] += np.sum(upstream * w * d2) / ell[1 + ch] ** 3
    return g_ell
