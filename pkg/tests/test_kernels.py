"""Backend equivalence and semantics of the gridding scatter kernels."""
import numpy as np
import pytest

from fnp import kernels
from fnp.kernels import gridding_numpy

cython = pytest.importorskip("fnp.kernels._gridding", reason="compiled backend not built")


def _case(n, h, w, c, seed=0, periodic=True, masked=True):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(-0.49, h - 0.51, n)
    cols = rng.uniform(0, w, n) if periodic else rng.uniform(0, w - 1, n)
    values = rng.standard_normal((n, c))
    mask = (rng.random((n, c)) > 0.25 if masked else np.ones((n, c))).astype(np.uint8)
    ell = rng.uniform(0.5, 3.0, c + 1)
    return rows, cols, values, mask, h, w, ell, periodic


@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("seed", range(4))
def test_backends_agree_forward(seed, periodic):
    args = _case(60, 9, 14, 3, seed=seed, periodic=periodic)
    out_np = gridding_numpy.gridding_forward(*args)
    out_cy = cython.gridding_forward(*args)
    for a, b in zip(out_np, out_cy):
        scale = max(np.abs(a).max(), 1.0)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * scale)


@pytest.mark.parametrize("periodic", [True, False])
def test_backends_agree_backward(periodic):
    args = _case(40, 8, 12, 3, seed=9, periodic=periodic)
    rng = np.random.default_rng(123)
    h, w, c = 8, 12, 3
    grads = (
        rng.standard_normal((h, w)),
        rng.standard_normal((c, h, w)),
        rng.standard_normal((c, h, w)),
    )
    g_np = gridding_numpy.gridding_backward(*args, *grads)
    g_cy = cython.gridding_backward(*args, *grads)
    np.testing.assert_allclose(g_np, g_cy, rtol=1e-12, atol=1e-12)


def test_empty_set_zero_output():
    args = _case(0, 6, 8, 2)
    for backend in (gridding_numpy, cython):
        density, num, den = backend.gridding_forward(*args)
        assert density.shape == (6, 8)
        assert not density.any() and not num.any() and not den.any()


def test_truncation_beyond_cutoff():
    # one point far from the probe cell: zero contribution beyond 6 scales
    h, w = 4, 64
    ell = np.array([1.0, 1.0])
    rows = np.array([0.0])
    cols = np.array([10.0])
    values = np.ones((1, 1))
    mask = np.ones((1, 1), np.uint8)
    for backend in (gridding_numpy, cython):
        density, num, den = backend.gridding_forward(
            rows, cols, values, mask, h, w, ell, False
        )
        assert density[0, 10] == pytest.approx(1.0)
        assert density[0, 17] == 0.0  # 7 cells away, past the 6-scale cutoff
        assert num[0, 0, 17] == 0.0


def test_periodic_wrap_contribution():
    h, w = 4, 16
    ell = np.array([1.0, 1.0])
    args = (np.array([1.0]), np.array([0.0]), np.ones((1, 1)),
            np.ones((1, 1), np.uint8), h, w, ell, True)
    density, _, _ = kernels.gridding_forward(*args)
    assert density[1, 15] == pytest.approx(np.exp(-0.5))  # one cell across the seam


def test_backward_matches_finite_differences():
    args = list(_case(25, 6, 10, 2, seed=4))
    rng = np.random.default_rng(7)
    grads = (
        rng.standard_normal((6, 10)),
        rng.standard_normal((2, 6, 10)),
        rng.standard_normal((2, 6, 10)),
    )

    def objective(ell):
        a = list(args)
        a[6] = ell
        density, num, den = kernels.gridding_forward(*a)
        return (grads[0] * density).sum() + (grads[1] * num).sum() + (grads[2] * den).sum()

    analytic = kernels.gridding_backward(*args, *grads)
    eps = 1e-6
    for i in range(3):
        ell_p = args[6].copy()
        ell_m = args[6].copy()
        ell_p[i] += eps
        ell_m[i] -= eps
        fd = (objective(ell_p) - objective(ell_m)) / (2 * eps)
        assert analytic[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_active_backend_is_cython_when_built():
    assert kernels.BACKEND in ("cython", "numpy")
    assert kernels.BACKEND == "cython"


def test_numpy_fallback_selected_via_env(tmp_path):
    """The env override selects the fallback at import and embeddings agree."""
    import os
    import subprocess
    import sys

    script = r"""
import json, sys
import numpy as np
import torch
from fnp import kernels
from fnp.encoder import ConditionalSet, SetConvEmbedding
from fnp.grids import ObservationSet, make_equiangular_grid

torch.manual_seed(0)
grid = make_equiangular_grid(6, 12)
rng = np.random.default_rng(3)
obs = ObservationSet(rng.uniform(-80, 80, 25), rng.uniform(0, 360, 25),
                     rng.standard_normal((25, 2)).astype(np.float32),
                     np.ones((25, 2), bool))
emb = SetConvEmbedding(2, 4)
with torch.no_grad():
    out = emb(ConditionalSet.from_observations(obs, grid)).numpy()
print(json.dumps({"backend": kernels.BACKEND, "sum": float(out.sum()),
                  "absmax": float(np.abs(out).max())}))
"""
    outputs = {}
    for backend in ("cython", "numpy"):
        env = dict(os.environ, FNP_GRIDDING=backend)
        proc = subprocess.run([sys.executable, "-c", script], env=env,
                              capture_output=True, text=True, check=True)
        outputs[backend] = __import__("json").loads(proc.stdout.strip().splitlines()[-1])
        assert outputs[backend]["backend"] == backend
    assert outputs["cython"]["sum"] == pytest.approx(outputs["numpy"]["sum"], rel=1e-10)
    assert outputs["cython"]["absmax"] == pytest.approx(outputs["numpy"]["absmax"], rel=1e-10)
