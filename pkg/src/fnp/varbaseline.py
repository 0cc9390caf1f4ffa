"""Classical three-dimensional variational analysis on small dense problems.

Serves as a closed-form oracle and sanity baseline: the analysis minimizing

    J(x) = 1/2 (x - x_b)^T B^-1 (x - x_b) + 1/2 (y - H x)^T R^-1 (y - H x)

is computed directly as x_a = x_b + B H^T (H B H^T + R)^-1 (y - H x_b).
Dense Cholesky linear algebra throughout; state dimension capped at 4096.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .grids import Field, GridError, LatLonGrid, ObservationSet, bilinear_weights

MAX_STATE_DIM = 4096


class VarProblemError(ValueError):
    """Inconsistent or non-positive-definite variational problem."""


def _check_spd(mat: np.ndarray, name: str):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise VarProblemError(f"{name} must be square")
    if mat.shape[0] == 0:
        return None
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise VarProblemError(f"{name} must be symmetric")
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise VarProblemError(f"{name} is not positive definite") from exc


@dataclass
class VarProblem:
    """Background, observations, covariances, and linear observation operator."""

    x_b: np.ndarray
    y: np.ndarray
    B: np.ndarray
    R: np.ndarray
    H_op: np.ndarray

    def __post_init__(self):
        self.x_b = np.asarray(self.x_b, dtype=np.float64).ravel()
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.B = np.asarray(self.B, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.H_op = np.asarray(self.H_op, dtype=np.float64)
        n, m = self.x_b.size, self.y.size
        if n > MAX_STATE_DIM:
            raise VarProblemError(f"state dimension {n} exceeds cap {MAX_STATE_DIM}")
        if self.B.shape != (n, n) or self.R.shape != (m, m) or self.H_op.shape != (m, n):
            raise VarProblemError("covariance / operator dimensions inconsistent")
        self._chol_b = _check_spd(self.B, "B")
        self._chol_r = _check_spd(self.R, "R")

    @property
    def n(self) -> int:
        return self.x_b.size

    @property
    def m(self) -> int:
        return self.y.size


def cost(x: np.ndarray, p: VarProblem) -> float:
    """The variational objective J(x)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != p.n:
        raise VarProblemError("state dimension mismatch")
    db = x - p.x_b
    jb = 0.5 * db @ cho_solve(p._chol_b, db)
    if p.m == 0:
        return float(jb)
    do = p.y - p.H_op @ x
    jo = 0.5 * do @ cho_solve(p._chol_r, do)
    return float(jb + jo)


def cost_gradient(x: np.ndarray, p: VarProblem) -> np.ndarray:
    """Gradient of J, for iterative minimizers and optimality checks."""
    x = np.asarray(x, dtype=np.float64).ravel()
    db = x - p.x_b
    grad = cho_solve(p._chol_b, db)
    if p.m == 0:
        return grad
    do = p.y - p.H_op @ x
    return grad - p.H_op.T @ cho_solve(p._chol_r, do)


def analytic_analysis(p: VarProblem) -> np.ndarray:
    """Closed-form minimizer x_a = x_b + B H^T (H B H^T + R)^-1 (y - H x_b)."""
    if p.m == 0:
        return p.x_b.copy()
    innovation = p.y - p.H_op @ p.x_b
    bht = p.B @ p.H_op.T
    s = p.H_op @ bht + p.R
    try:
        chol_s = cho_factor(s, lower=True)
    except np.linalg.LinAlgError as exc:  # cannot occur under SPD invariants
        raise VarProblemError("innovation covariance is singular") from exc
    return p.x_b + bht @ cho_solve(chol_s, innovation)


def gaussian_covariance(grid: LatLonGrid, corr_length_cells: float,
                        sigma: float, jitter: float = 1e-4) -> np.ndarray:
    """SPD covariance, Gaussian in grid-cell distance, periodized in longitude.

    A Gaussian of the wrapped (geodesic) distance is not positive definite on
    a circle, so the longitude factor is the periodized Gaussian (sum over
    wraps), whose Fourier coefficients are positive; the separable product
    with the latitude Gaussian is then a valid covariance.  The nugget covers
    floating-point roundoff on near-singular Gram matrices.
    """
    h, w = grid.shape
    ell2 = corr_length_cells**2
    rows, cols = np.divmod(np.arange(h * w), w)
    dr = (rows[:, None] - rows[None, :]).astype(np.float64)
    kr = np.exp(-0.5 * dr**2 / ell2)
    dc = (cols[:, None] - cols[None, :]).astype(np.float64)
    if grid.periodic_lon:
        kc = np.zeros_like(dc)
        for shift in range(-2, 3):
            kc += np.exp(-0.5 * (dc + shift * w) ** 2 / ell2)
    else:
        kc = np.exp(-0.5 * dc**2 / ell2)
    cov = sigma**2 * kr * kc
    return cov + jitter * sigma**2 * np.eye(h * w)


def problem_from_fields(
    background: Field,
    obs: ObservationSet,
    corr_length_cells: float = 2.0,
    sigma_b: float = 1.0,
    sigma_r: float = 0.1,
) -> VarProblem:
    """Assemble a dense VarProblem from gridded background and sparse observations.

    The state is the channel-major flattening of the background grid; B is
    block-diagonal over channels with Gaussian spatial correlation, R is
    diagonal, and H holds the bilinear interpolation weights of each observed
    (point, channel) entry.
    """
    grid = background.grid
    h, w = grid.shape
    c = background.n_channels
    n = c * h * w
    if n > MAX_STATE_DIM:
        raise VarProblemError(f"state dimension {n} exceeds cap {MAX_STATE_DIM}")
    if obs.n_channels != c:
        raise GridError("observation channels do not match background")
    block = gaussian_covariance(grid, corr_length_cells, sigma_b)
    big_b = np.kron(np.eye(c), block)
    idx, wts = bilinear_weights(grid, obs.lats, obs.lons)
    rows_h = []
    y = []
    for i in range(obs.n_points):
        for ch in range(c):
            if not obs.mask[i, ch]:
                continue
            row = np.zeros(n)
            row[ch * h * w + idx[i]] = wts[i]
            rows_h.append(row)
            y.append(obs.values[i, ch])
    m = len(y)
    h_op = np.vstack(rows_h) if m else np.zeros((0, n))
    return VarProblem(
        background.values.reshape(-1).astype(np.float64),
        np.asarray(y, dtype=np.float64),
        big_b,
        sigma_r**2 * np.eye(m),
        h_op,
    )
