import numpy as np
import pytest

from fnp.grids import ChannelInfo, make_equiangular_grid
from fnp.synthetic import (
    BackgroundSpec,
    FieldSpec,
    SpecError,
    generate_background,
    generate_dataset,
    generate_truth,
    load_sample,
    read_manifest,
)


def _spec(n_channels=2, slope=-2.0, amp=1.0, corr=0.0):
    chans = tuple(ChannelInfo(f"c{i}", i % 2) for i in range(n_channels))
    return FieldSpec(chans, slope, tuple([amp] * n_channels), corr)


class TestFieldSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(SpecError):
            _spec(amp=-1.0)
        with pytest.raises(SpecError):
            _spec(slope=1.0)
        with pytest.raises(SpecError):
            FieldSpec((ChannelInfo("a", 0),), cross_channel_corr=2.0)
        with pytest.raises(SpecError):
            _spec(n_channels=3, corr=-0.9)  # not PSD for 3 channels


class TestGenerateTruth:
    def test_deterministic(self):
        grid = make_equiangular_grid(16, 32)
        a = generate_truth(_spec(), grid, seed=5)
        b = generate_truth(_spec(), grid, seed=5)
        np.testing.assert_array_equal(a.values, b.values)
        c = generate_truth(_spec(), grid, seed=6)
        assert not np.array_equal(a.values, c.values)

    def test_white_spectrum_variance_identity(self):
        # slope 0: sample variance per channel within 5% of amplitude^2,
        # checked by Monte Carlo over seeds on a 128x256 grid
        grid = make_equiangular_grid(128, 256)
        spec = _spec(n_channels=1, slope=0.0, amp=1.7)
        variances = [
            generate_truth(spec, grid, seed).values.astype(np.float64).var()
            for seed in range(20)
        ]
        mean_var = float(np.mean(variances))
        assert abs(mean_var - 1.7**2) <= 0.05 * 1.7**2

    def test_sample_mean_near_zero(self):
        # DC mode is zeroed, so the grid mean is zero up to float32 roundoff
        grid = make_equiangular_grid(32, 64)
        for seed in range(5):
            field = generate_truth(_spec(slope=-1.5), grid, seed)
            assert abs(field.values.mean()) < 1e-5

    def test_cross_channel_correlation(self):
        grid = make_equiangular_grid(64, 128)
        spec = _spec(n_channels=2, slope=-1.0, corr=0.6)
        corrs = []
        for seed in range(10):
            v = generate_truth(spec, grid, seed).values.reshape(2, -1).astype(np.float64)
            corrs.append(np.corrcoef(v)[0, 1])
        assert np.mean(corrs) == pytest.approx(0.6, abs=0.05)

    def test_red_spectrum_is_smoother_than_white(self):
        grid = make_equiangular_grid(32, 64)
        white = generate_truth(_spec(slope=0.0), grid, 0).values[0].astype(np.float64)
        red = generate_truth(_spec(slope=-3.0), grid, 0).values[0].astype(np.float64)

        def high_freq_fraction(x):
            spec2 = np.abs(np.fft.fft2(x)) ** 2
            kx = np.fft.fftfreq(x.shape[0])[:, None]
            ky = np.fft.fftfreq(x.shape[1])[None, :]
            k = np.sqrt(kx**2 + ky**2)
            band = k > 0.75 * k.max()
            return spec2[band].sum() / spec2.sum()

        assert high_freq_fraction(red) < 0.1 * high_freq_fraction(white)


class TestGenerateBackground:
    def test_zero_lead_time_identity(self):
        grid = make_equiangular_grid(16, 32)
        truth = generate_truth(_spec(), grid, 0)
        bg = generate_background(truth, BackgroundSpec(lead_time=0.0), seed=1)
        np.testing.assert_array_equal(bg.values, truth.values)

    def test_degenerate_spec_identity_any_lead(self):
        grid = make_equiangular_grid(16, 32)
        truth = generate_truth(_spec(), grid, 0)
        spec = BackgroundSpec(lead_time=72.0, smoothing_scale=0.0, noise_amplitude=0.0)
        bg = generate_background(truth, spec, seed=1)
        np.testing.assert_allclose(bg.values, truth.values, atol=1e-7)

    def test_negative_lead_rejected(self):
        with pytest.raises(SpecError):
            BackgroundSpec(lead_time=-1.0)

    def test_error_grows_with_lead_time(self):
        grid = make_equiangular_grid(16, 32)
        mses = {24.0: [], 48.0: []}
        for seed in range(10):
            truth = generate_truth(_spec(), grid, seed)
            for lead in mses:
                bg = generate_background(truth, BackgroundSpec(lead_time=lead), seed=seed + 100)
                mses[lead].append(float(((bg.values - truth.values) ** 2).mean()))
        assert np.mean(mses[48.0]) > np.mean(mses[24.0])

    def test_error_monotone_over_lead_ensemble(self):
        grid = make_equiangular_grid(16, 32)
        leads = [0.0, 12.0, 24.0, 48.0, 96.0]
        means = []
        for lead in leads:
            errs = []
            for seed in range(8):
                truth = generate_truth(_spec(), grid, seed)
                bg = generate_background(truth, BackgroundSpec(lead_time=lead), seed=seed + 55)
                errs.append(float(((bg.values - truth.values) ** 2).mean()))
            means.append(np.mean(errs))
        assert all(a <= b + 1e-12 for a, b in zip(means[:-1], means[1:]))

    def test_background_smoother_than_truth(self):
        # top-quartile spectral energy strictly below truth's for positive lead
        grid = make_equiangular_grid(32, 64)
        for seed in range(5):
            truth = generate_truth(_spec(slope=-2.0), grid, seed)
            bg = generate_background(truth, BackgroundSpec(lead_time=24.0), seed=seed + 9)

            def top_band_energy(values):
                spec2 = np.abs(np.fft.fft2(values.astype(np.float64), axes=(1, 2))) ** 2
                kx = np.fft.fftfreq(values.shape[1])[:, None]
                ky = np.fft.fftfreq(values.shape[2])[None, :]
                k = np.sqrt(kx**2 + ky**2)
                return spec2[:, k > 0.75 * k.max()].sum()

            assert top_band_energy(bg.values) < top_band_energy(truth.values)


class TestDatasetManifest:
    def test_generate_and_reload(self, tmp_path):
        grid = make_equiangular_grid(8, 16)
        manifest = generate_dataset(
            grid, _spec(), BackgroundSpec(), n_train=4, n_val=2, n_test=2,
            base_seed=7, out_dir=tmp_path / "ds",
        )
        assert len(manifest.samples) == 8
        assert manifest.splits["train"] == [0, 1, 2, 3]
        assert manifest.splits["test"] == [6, 7]
        back = read_manifest(tmp_path / "ds" / "manifest.json")
        assert back.splits == manifest.splits
        truth, bg = load_sample(back, back.split_entries("val")[0])
        assert truth.values.shape == (2, 8, 16)
        assert bg.grid == truth.grid

    def test_split_seed_ranges_disjoint(self, tmp_path):
        grid = make_equiangular_grid(4, 8)
        manifest = generate_dataset(
            grid, _spec(), BackgroundSpec(), 3, 2, 2, base_seed=0, out_dir=tmp_path / "ds",
        )
        seeds = {split: {s.seed for s in manifest.split_entries(split)}
                 for split in ("train", "val", "test")}
        assert not (seeds["train"] & seeds["val"])
        assert not (seeds["train"] & seeds["test"])
        assert not (seeds["val"] & seeds["test"])
