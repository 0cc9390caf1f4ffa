import numpy as np
import pytest
import torch

from fnp.grids import ChannelInfo, Field, GridError, ObservationSet, make_equiangular_grid, sample_observations
from fnp.models import (
    Batch,
    ModelSettings,
    VARIANT_TAGS,
    aggregate_to_grid,
    build_variant,
    count_parameters,
    observation_reference_grid,
)

from conftest import random_field, random_obs

CHANNELS = (ChannelInfo("z500", 0), ChannelInfo("t2m", 1), ChannelInfo("u10", 1))
SETTINGS = ModelSettings(channels=CHANNELS, embed_dim=6, n_layers=2,
                         modes_lat=2, modes_lon=3, decoder_hidden=(16, 16))


def _batch(grid, obs_grid=None, n_obs=20, bg_present=True, seed=0):
    obs_grid = obs_grid or grid
    rng = np.random.default_rng(seed)
    background = torch.from_numpy(
        rng.standard_normal((2, 3, grid.n_lat, grid.n_lon))
    ).float()
    obs = [random_obs(obs_grid, n_obs, 3, seed=seed + i) for i in range(2)]
    return Batch(background, bg_present, obs, grid, obs_grid)


class TestBuildVariant:
    def test_unknown_tag_rejected(self):
        with pytest.raises(GridError):
            build_variant("fnp_extra", SETTINGS)

    def test_fnp_has_spectral_weights_no_nfl_does_not(self):
        fnp = build_variant("fnp", SETTINGS)
        no_nfl = build_variant("fnp_no_nfl", SETTINGS)
        assert any("spectral" in name for name, _ in fnp.named_parameters())
        assert not any("spectral" in name for name, _ in no_nfl.named_parameters())

    @pytest.mark.parametrize("tag", [t for t in VARIANT_TAGS if t != "fnp"])
    def test_no_variant_exceeds_full_model_budget(self, tag):
        # ablations must not out-parameter the full model (cap at +10%)
        ref = count_parameters(build_variant("fnp", SETTINGS))
        got = count_parameters(build_variant(tag, SETTINGS))
        assert got <= 1.10 * ref

    def test_same_seed_same_init(self):
        a = build_variant("fnp", SETTINGS, seed=3)
        b = build_variant("fnp", SETTINGS, seed=3)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            torch.testing.assert_close(pa, pb, rtol=0, atol=0)


class TestForwardContract:
    @pytest.mark.parametrize("tag", VARIANT_TAGS)
    def test_all_variants_share_forward_contract(self, tag):
        grid = make_equiangular_grid(8, 16)
        model = build_variant(tag, SETTINGS)
        batch = _batch(grid)
        with torch.no_grad():
            mean, var = model(batch)
        assert mean.shape == (2, 3, 8, 16)
        assert var.shape == (2, 3, 8, 16)
        assert torch.isfinite(mean).all() and (var > 0).all()

    @pytest.mark.parametrize("tag", ["fnp", "convcnp"])
    def test_flexible_variants_accept_any_observation_count(self, tag):
        grid = make_equiangular_grid(8, 16)
        model = build_variant(tag, SETTINGS)
        for n_obs in (0, 1, 7, 200):
            batch = _batch(grid, n_obs=n_obs)
            with torch.no_grad():
                mean, var = model(batch)
            assert torch.isfinite(mean).all()

    @pytest.mark.parametrize("tag", ["fnp", "convcnp"])
    def test_flexible_variants_accept_other_resolutions(self, tag):
        grid = make_equiangular_grid(8, 16)
        model = build_variant(tag, SETTINGS)
        for obs_grid in (make_equiangular_grid(16, 32), make_equiangular_grid(4, 8)):
            batch = _batch(grid, obs_grid=obs_grid, n_obs=30)
            with torch.no_grad():
                mean, _ = model(batch)
            assert mean.shape == (2, 3, 8, 16)

    def test_reconstruction_mode_empty_background(self):
        grid = make_equiangular_grid(8, 16)
        model = build_variant("fnp", SETTINGS)
        batch = _batch(grid, bg_present=False)
        with torch.no_grad():
            mean, var = model(batch)
        assert torch.isfinite(mean).all() and (var > 0).all()

    def test_no_dam_differs_from_fnp(self):
        grid = make_equiangular_grid(8, 16)
        batch = _batch(grid)
        with torch.no_grad():
            mean_a, _ = build_variant("fnp", SETTINGS, seed=0)(batch)
            mean_b, _ = build_variant("fnp_no_dam", SETTINGS, seed=0)(batch)
        assert not torch.allclose(mean_a, mean_b)


class TestAggregateToGrid:
    def test_on_grid_full_ratio_lossless(self):
        grid = make_equiangular_grid(8, 16)
        truth = random_field(grid, CHANNELS, seed=1)
        obs = sample_observations(truth, grid, 1.0, seed=0)
        agg = aggregate_to_grid(obs, grid)
        assert agg.n_points == 8 * 16
        dense = np.zeros_like(truth.values)
        rows = ((grid.latitudes[0] - agg.lats) / -grid.lat_step).round().astype(int)
        cols = (agg.lons / grid.lon_step).round().astype(int)
        dense[:, rows, cols] = agg.values.T
        np.testing.assert_allclose(dense, truth.values, rtol=1e-6)

    def test_high_resolution_aggregation_loses_information(self):
        coarse = make_equiangular_grid(4, 8)
        fine = make_equiangular_grid(16, 32)
        truth = random_field(fine, CHANNELS, seed=2)  # nonzero intra-cell variance
        obs = sample_observations(truth, fine, 0.5, seed=3)
        agg = aggregate_to_grid(obs, coarse)
        # cell means of the sub-sampled observations differ from the cell
        # means of the truth within each coarse cell
        coarse_truth = truth.values.reshape(3, 4, 4, 8, 4).mean(axis=(2, 4))
        rows = ((coarse.latitudes[0] - agg.lats) / -coarse.lat_step).round().astype(int)
        cols = (agg.lons / coarse.lon_step).round().astype(int)
        diffs = np.abs(agg.values.T - coarse_truth[:, rows, cols])
        assert diffs.max() > 0.05

    def test_empty_cells_masked_out(self):
        grid = make_equiangular_grid(4, 8)
        obs = ObservationSet([grid.latitudes[0]], [grid.longitudes[0]],
                             np.ones((1, 3), np.float32), np.ones((1, 3), bool))
        agg = aggregate_to_grid(obs, grid)
        assert agg.n_points == 1
        assert agg.mask.all()


class TestObservationReferenceGrid:
    def test_reconstructs_source_grid(self):
        target = make_equiangular_grid(8, 16)
        fine = make_equiangular_grid(32, 64)
        truth = random_field(fine, CHANNELS)
        obs = sample_observations(truth, fine, 0.1, seed=0)
        ref = observation_reference_grid(obs, target)
        assert ref.shape == (32, 64)

    def test_falls_back_to_target(self):
        target = make_equiangular_grid(8, 16)
        obs = ObservationSet.empty(3)
        assert observation_reference_grid(obs, target) == target
