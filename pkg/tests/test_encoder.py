import math

import numpy as np
import pytest
import torch

from fnp.encoder import (
    DENSITY_EPS,
    ConditionalSet,
    DecoupledEncoder,
    SetConvEmbedding,
    build_svd_representation,
    set_conv_embed,
)
from fnp.grids import GridError, ObservationSet, make_equiangular_grid
from fnp.kernels import CUTOFF

from conftest import random_field, random_obs


def _shuffled(obs, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(obs.n_points)
    return ObservationSet(obs.lats[perm], obs.lons[perm], obs.values[perm],
                          obs.mask[perm], obs.source_resolution)


class TestSetConvEmbedding:
    def test_empty_set_zero_pre_map(self, small_grid):
        emb = SetConvEmbedding(3, 8)
        pre = emb.pre_map(ConditionalSet.empty(3, small_grid))
        assert pre.shape == (4, 8, 16)
        assert torch.count_nonzero(pre) == 0

    def test_single_ongrid_observation_density_is_kernel(self, small_grid):
        emb = SetConvEmbedding(1, 4, init_length_scale=1.5)
        obs = ObservationSet(
            [small_grid.latitudes[3]], [small_grid.longitudes[5]],
            np.ones((1, 1), np.float32), np.ones((1, 1), bool),
        )
        cond = ConditionalSet.from_observations(obs, small_grid)
        with torch.no_grad():
            pre = emb.pre_map(cond).numpy()
        density = pre[0]
        # direct kernel evaluation oracle at a handful of grid offsets
        ell = 1.5
        for (r, c) in [(3, 5), (3, 6), (2, 5), (4, 8), (0, 5), (3, 5 - 3)]:
            dr, dc = r - 3, c - 5
            dc = (dc + 8) % 16 - 8
            d2 = dr * dr + dc * dc
            expected = math.exp(-0.5 * d2 / ell**2) if d2 <= (CUTOFF * ell) ** 2 else 0.0
            assert density[r, c] == pytest.approx(expected, rel=1e-12, abs=1e-15)
        assert density.argmax() == 3 * 16 + 5
        # unit value with a single point: normalized signal is 1 where density > eps
        signal = pre[1]
        covered = density > DENSITY_EPS
        np.testing.assert_allclose(signal[covered], 1.0, rtol=1e-9)

    def test_permutation_invariance(self, small_grid):
        emb = SetConvEmbedding(3, 8)
        obs = random_obs(small_grid, 50, 3, seed=2, masked=True)
        cond_a = ConditionalSet.from_observations(obs, small_grid)
        cond_b = ConditionalSet.from_observations(_shuffled(obs, 3), small_grid)
        with torch.no_grad():
            out_a = emb(cond_a).numpy()
            out_b = emb(cond_b).numpy()
        assert np.abs(out_a - out_b).max() <= 1e-6 * max(np.abs(out_a).max(), 1.0)

    def test_locality_beyond_six_scales(self, channels):
        grid = make_equiangular_grid(4, 64)
        emb = SetConvEmbedding(1, 4, init_length_scale=1.0)
        base = ObservationSet([grid.latitudes[1]], [grid.longitudes[2]],
                              np.ones((1, 1), np.float32), np.ones((1, 1), bool))
        moved = ObservationSet([grid.latitudes[1]], [grid.longitudes[40]],
                               np.ones((1, 1), np.float32), np.ones((1, 1), bool))
        probe = (1, 2)
        with torch.no_grad():
            pre_base = emb.pre_map(ConditionalSet.from_observations(base, grid)).numpy()
            pre_moved = emb.pre_map(ConditionalSet.from_observations(moved, grid)).numpy()
        # contribution of the moved point at the probe cell is identically zero
        assert abs(pre_moved[0][probe]) <= 1e-8
        assert abs(pre_base[0][probe] - 1.0) <= 1e-12

    def test_ongrid_degenerates_to_masked_convolution(self, small_grid):
        """Points exactly on the reference grid = standard conv of mask/value grids."""
        emb = SetConvEmbedding(2, 4, init_length_scale=1.25)
        obs = random_obs(small_grid, 0, 2)
        rng = np.random.default_rng(8)
        h, w = small_grid.shape
        mask_grid = rng.random((2, h, w)) > 0.5
        value_grid = rng.standard_normal((2, h, w)).astype(np.float32)
        rows, cols = np.nonzero(mask_grid.any(axis=0))
        obs = ObservationSet(
            small_grid.latitudes[rows], small_grid.longitudes[cols],
            value_grid[:, rows, cols].T, mask_grid[:, rows, cols].T,
        )
        with torch.no_grad():
            pre = emb.pre_map(ConditionalSet.from_observations(obs, small_grid)).numpy()

        # oracle: dense convolution with the truncated Gaussian stencil
        ell = float(emb.length_scales[1].detach())
        kr = np.arange(h)[:, None, None, None] - np.arange(h)[None, None, :, None]
        kc = np.arange(w)[None, :, None, None] - np.arange(w)[None, None, None, :]
        kc = (kc + w // 2) % w - w // 2
        d2 = kr**2 + kc**2
        stencil = np.exp(-0.5 * d2 / ell**2) * (d2 <= (CUTOFF * ell) ** 2)
        for c in range(2):
            num = np.einsum("hwij,ij->hw", stencil, value_grid[c] * mask_grid[c])
            den = np.einsum("hwij,ij->hw", stencil, mask_grid[c].astype(float))
            expected = np.where(den > DENSITY_EPS, num / np.maximum(den, DENSITY_EPS), 0.0)
            got = pre[1 + c]
            assert np.abs(got - expected).max() <= 1e-6 * max(np.abs(expected).max(), 1.0)

    def test_non_finite_observations_rejected(self, small_grid):
        with pytest.raises(GridError):
            ObservationSet([0.0], [0.0], np.array([[np.inf]], np.float32),
                           np.ones((1, 1), bool))

    def test_output_shape_and_density_channel(self, small_grid):
        emb = SetConvEmbedding(3, 16)
        obs = random_obs(small_grid, 20, 3)
        out = set_conv_embed(ConditionalSet.from_observations(obs, small_grid), emb)
        assert out.values.shape == (17, 8, 16)
        assert out.density_channel_index == 0
        assert (out.values[0] >= 0).all()


class TestDecoupledEncoder:
    def test_channel_count_multi_group(self, small_grid, channels):
        enc = DecoupledEncoder(channels, embed_dim=8)
        # two groups + one joint embedding, each embed_dim + 1 channels
        assert enc.out_channels == 3 * 9
        obs = random_obs(small_grid, 30, 3)
        with torch.no_grad():
            out = enc(ConditionalSet.from_observations(obs, small_grid))
        assert out.shape == (27, 8, 16)

    def test_six_group_paper_layout(self, small_grid):
        from fnp.grids import ChannelInfo

        chans = tuple(ChannelInfo(f"u{i}", i) for i in range(5)) + (
            ChannelInfo("sfc_a", 5), ChannelInfo("sfc_b", 5),
        )
        enc = DecoupledEncoder(chans, embed_dim=4)
        # 6 spatial representations + 1 variable representation
        assert len(enc.spatial) == 6
        assert enc.out_channels == 7 * 5

    def test_single_group_channel_count(self, small_grid):
        from fnp.grids import ChannelInfo

        chans = (ChannelInfo("a", 0), ChannelInfo("b", 0))
        enc = DecoupledEncoder(chans, embed_dim=8)
        assert enc.out_channels == 2 * 8 + 2

    def test_empty_observations_zero_density_background_untouched(self, small_grid, channels):
        bg = random_field(small_grid, channels, seed=1)
        enc_bg = DecoupledEncoder(channels, 8)
        enc_obs = DecoupledEncoder(channels, 8)
        empty = ObservationSet.empty(3)
        rb, ro = build_svd_representation(bg, empty, enc_bg, enc_obs, small_grid, small_grid)
        assert not ro.values[0].any()
        assert rb.values[0].max() > 0

    def test_gradients_flow_to_length_scales(self, small_grid, channels):
        enc = DecoupledEncoder(channels, 4)
        obs = random_obs(small_grid, 25, 3)
        out = enc(ConditionalSet.from_observations(obs, small_grid))
        out.sum().backward()
        for emb in list(enc.spatial) + [enc.joint]:
            assert emb.log_scales.grad is not None
            assert torch.isfinite(emb.log_scales.grad).all()
