import numpy as np
import pytest

from fnp.fileio import FileFormatError, read_field, read_obs, write_field, write_obs
from fnp.grids import ObservationSet, make_equiangular_grid

from conftest import random_field, random_obs


def test_field_roundtrip_bit_exact(tmp_path, small_grid, channels):
    field = random_field(small_grid, channels, seed=7)
    path = tmp_path / "field.fnpf"
    write_field(field, path)
    back = read_field(path)
    assert back.grid == field.grid
    assert back.channels == field.channels
    np.testing.assert_array_equal(back.values, field.values)
    # re-writing the read object reproduces the file byte-for-byte
    path2 = tmp_path / "field2.fnpf"
    write_field(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_field_sidecar_written(tmp_path, small_grid, channels):
    field = random_field(small_grid, channels)
    path = tmp_path / "field.fnpf"
    write_field(field, path)
    sidecar = tmp_path / "field.fnpf.meta.json"
    assert sidecar.exists()
    assert "cell-centered" in sidecar.read_text()


def test_obs_roundtrip_bit_exact(tmp_path, small_grid):
    obs = random_obs(small_grid, 37, 3, seed=5, masked=True)
    path = tmp_path / "obs.fnpo"
    write_obs(obs, path)
    back = read_obs(path)
    np.testing.assert_array_equal(back.lats, obs.lats)
    np.testing.assert_array_equal(back.lons, obs.lons)
    np.testing.assert_array_equal(back.values, obs.values)
    np.testing.assert_array_equal(back.mask, obs.mask)
    assert back.source_resolution == obs.source_resolution
    path2 = tmp_path / "obs2.fnpo"
    write_obs(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_empty_obs_roundtrip(tmp_path):
    obs = ObservationSet.empty(4, source_resolution=1.5)
    path = tmp_path / "empty.fnpo"
    write_obs(obs, path)
    back = read_obs(path)
    assert back.n_points == 0
    assert back.n_channels == 4
    assert back.source_resolution == 1.5


def test_magic_mismatch(tmp_path, small_grid, channels):
    path = tmp_path / "field.fnpf"
    write_field(random_field(small_grid, channels), path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTMAGIC"
    path.write_bytes(raw)
    with pytest.raises(FileFormatError, match="magic"):
        read_field(path)


def test_truncated_file_names_section(tmp_path, small_grid, channels):
    path = tmp_path / "field.fnpf"
    write_field(random_field(small_grid, channels), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 17])
    with pytest.raises(FileFormatError, match="payload"):
        read_field(path)
    path.write_bytes(raw[:10])
    with pytest.raises(FileFormatError, match="header"):
        read_field(path)


def test_trailing_bytes_rejected(tmp_path, small_grid):
    obs = random_obs(small_grid, 5, 2)
    path = tmp_path / "obs.fnpo"
    write_obs(obs, path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(FileFormatError, match="trailing"):
        read_obs(path)


def test_non_finite_payload_rejected(tmp_path, small_grid, channels):
    field = random_field(small_grid, channels)
    path = tmp_path / "field.fnpf"
    write_field(field, path)
    raw = bytearray(path.read_bytes())
    raw[-4:] = np.float32(np.inf).tobytes()
    path.write_bytes(raw)
    with pytest.raises(FileFormatError, match="non-finite"):
        read_field(path)


def test_grid_metadata_preserved(tmp_path, channels):
    grid = make_equiangular_grid(6, 12, lat_bounds=(-30, 60), lon_bounds=(10, 100))
    field = random_field(grid, channels)
    path = tmp_path / "regional.fnpf"
    write_field(field, path)
    back = read_field(path)
    assert back.grid == grid
    assert not back.grid.periodic_lon
