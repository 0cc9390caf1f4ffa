# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled core for the point-set -> grid Gaussian scatter.

Semantics are defined in fnp.kernels.gridding_numpy (the pure-Python
reference); the two backends must agree to floating-point roundoff.  The
Gaussian is evaluated separably (one exp per window row and column, multiplied
per cell) with the radial truncation applied on the summed squared distance.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor

cnp.import_array()

cdef double CUTOFF = 6.0


cdef inline double _wrap_dc(double dc, double W) noexcept nogil:
    dc = dc % W
    if dc > 0.5 * W:
        dc -= W
    elif dc < -0.5 * W:
        dc += W
    return dc


cdef struct Window:
    Py_ssize_t rlo
    Py_ssize_t rhi
    Py_ssize_t clo
    Py_ssize_t chi
    double cut2


cdef inline bint _fill_window(
    double r, double c, double ell,
    Py_ssize_t H, Py_ssize_t W, bint periodic,
    double[::1] wr, double[::1] dr2, double[::1] wc, double[::1] dc2,
    Window* win,
) noexcept nogil:
    """Populate per-row / per-column weights and squared offsets; False if empty."""
    cdef Py_ssize_t rlo, rhi, clo, chi, h, j
    cdef double cut, inv2, dr, dc
    cut = CUTOFF * ell
    win.cut2 = cut * cut
    inv2 = 0.5 / (ell * ell)
    rlo = <Py_ssize_t>ceil(r - cut)
    rhi = <Py_ssize_t>floor(r + cut)
    if rlo < 0:
        rlo = 0
    if rhi > H - 1:
        rhi = H - 1
    if rlo > rhi:
        return False
    clo = <Py_ssize_t>ceil(c - cut)
    chi = <Py_ssize_t>floor(c + cut)
    if periodic:
        if chi - clo + 1 >= W:
            clo = 0
            chi = W - 1
    else:
        if clo < 0:
            clo = 0
        if chi > W - 1:
            chi = W - 1
    if clo > chi:
        return False
    for h in range(rlo, rhi + 1):
        dr = h - r
        dr2[h - rlo] = dr * dr
        wr[h - rlo] = exp(-dr * dr * inv2)
    for j in range(clo, chi + 1):
        dc = j - c
        if periodic:
            dc = _wrap_dc(dc, <double>W)
        dc2[j - clo] = dc * dc
        wc[j - clo] = exp(-dc * dc * inv2)
    win.rlo = rlo
    win.rhi = rhi
    win.clo = clo
    win.chi = chi
    return True


cdef inline void _scatter_point(
    Window* win, bint periodic, Py_ssize_t W,
    double[::1] wr, double[::1] dr2, double[::1] wc, double[::1] dc2,
    double coeff_num, double coeff_den,
    double[:, ::1] out_num, double[:, ::1] out_den, bint with_den,
) noexcept nogil:
    cdef Py_ssize_t h, j, jw
    cdef double w
    for h in range(win.rlo, win.rhi + 1):
        for j in range(win.clo, win.chi + 1):
            if dr2[h - win.rlo] + dc2[j - win.clo] > win.cut2:
                continue
            w = wr[h - win.rlo] * wc[j - win.clo]
            jw = j % W if periodic else j
            if jw < 0:
                jw += W
            out_num[h, jw] += coeff_num * w
            if with_den:
                out_den[h, jw] += coeff_den * w


cdef inline double _gather_point(
    Window* win, bint periodic, Py_ssize_t W,
    double[::1] wr, double[::1] dr2, double[::1] wc, double[::1] dc2,
    double coeff_num, double coeff_den,
    double[:, ::1] g_num, double[:, ::1] g_den, bint with_den,
) noexcept nogil:
    """Sum over the stencil of upstream * w * d^2 (ell gradient numerator)."""
    cdef Py_ssize_t h, j, jw
    cdef double acc, up, d2
    acc = 0.0
    for h in range(win.rlo, win.rhi + 1):
        for j in range(win.clo, win.chi + 1):
            d2 = dr2[h - win.rlo] + dc2[j - win.clo]
            if d2 > win.cut2:
                continue
            jw = j % W if periodic else j
            if jw < 0:
                jw += W
            up = coeff_num * g_num[h, jw]
            if with_den:
                up += coeff_den * g_den[h, jw]
            acc += up * wr[h - win.rlo] * wc[j - win.clo] * d2
    return acc


def _scratch(Py_ssize_t H, Py_ssize_t W, double ell_max):
    cdef Py_ssize_t half = <Py_ssize_t>ceil(CUTOFF * ell_max) + 2
    rows = min(H, 2 * half + 1)
    cols = min(W, 2 * half + 1)
    return np.empty(rows), np.empty(rows), np.empty(cols), np.empty(cols)


def gridding_forward(
    double[::1] rows, double[::1] cols,
    double[:, ::1] values, cnp.uint8_t[:, ::1] mask,
    Py_ssize_t H, Py_ssize_t W, double[::1] ell, bint periodic,
):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t C = values.shape[1]
    density_arr = np.zeros((H, W))
    num_arr = np.zeros((C, H, W))
    den_arr = np.zeros((C, H, W))
    cdef double[:, ::1] density = density_arr
    cdef double[:, :, ::1] num = num_arr
    cdef double[:, :, ::1] den = den_arr
    wr_a, dr2_a, wc_a, dc2_a = _scratch(H, W, float(max(np.asarray(ell).max(), 1e-12)))
    cdef double[::1] wr = wr_a
    cdef double[::1] dr2 = dr2_a
    cdef double[::1] wc = wc_a
    cdef double[::1] dc2 = dc2_a
    cdef Window win
    cdef Py_ssize_t i, ch
    with nogil:
        for i in range(n):
            if _fill_window(rows[i], cols[i], ell[0], H, W, periodic,
                            wr, dr2, wc, dc2, &win):
                _scatter_point(&win, periodic, W, wr, dr2, wc, dc2,
                               1.0, 0.0, density, density, False)
            for ch in range(C):
                if not mask[i, ch]:
                    continue
                if _fill_window(rows[i], cols[i], ell[1 + ch], H, W, periodic,
                                wr, dr2, wc, dc2, &win):
                    _scatter_point(&win, periodic, W, wr, dr2, wc, dc2,
                                   values[i, ch], 1.0, num[ch], den[ch], True)
    return density_arr, num_arr, den_arr


def gridding_backward(
    double[::1] rows, double[::1] cols,
    double[:, ::1] values, cnp.uint8_t[:, ::1] mask,
    Py_ssize_t H, Py_ssize_t W, double[::1] ell, bint periodic,
    double[:, ::1] g_density, double[:, :, ::1] g_num, double[:, :, ::1] g_den,
):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t C = values.shape[1]
    g_ell_arr = np.zeros(C + 1)
    cdef double[::1] g_ell = g_ell_arr
    wr_a, dr2_a, wc_a, dc2_a = _scratch(H, W, float(max(np.asarray(ell).max(), 1e-12)))
    cdef double[::1] wr = wr_a
    cdef double[::1] dr2 = dr2_a
    cdef double[::1] wc = wc_a
    cdef double[::1] dc2 = dc2_a
    cdef Window win
    cdef Py_ssize_t i, ch
    cdef double acc
    with nogil:
        for i in range(n):
            if _fill_window(rows[i], cols[i], ell[0], H, W, periodic,
                            wr, dr2, wc, dc2, &win):
                acc = _gather_point(&win, periodic, W, wr, dr2, wc, dc2,
                                    1.0, 0.0, g_density, g_density, False)
                g_ell[0] += acc / (ell[0] * ell[0] * ell[0])
            for ch in range(C):
                if not mask[i, ch]:
                    continue
                if _fill_window(rows[i], cols[i], ell[1 + ch], H, W, periodic,
                                wr, dr2, wc, dc2, &win):
                    acc = _gather_point(&win, periodic, W, wr, dr2, wc, dc2,
                                        values[i, ch], 1.0, g_num[ch], g_den[ch], True)
                    g_ell[1 + ch] += acc / (ell[1 + ch] * ell[1 + ch] * ell[1 + ch])
    return g_ell_arr
