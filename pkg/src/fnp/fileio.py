"""Bit-exact binary I/O for fields and observation sets.

Field format (little-endian throughout):
    magic   8 bytes  b"FNPGRID1"
    header  u32 H, u32 W, u32 C
            f64 lat0, f64 dlat, f64 lon0, f64 dlon   (cell-centered grid, see grids)
            u32 group id per channel (C entries)
            per channel: u32 byte length + utf-8 name
    payload f32, channel-major, row-major (H, W) order

Observation format:
    magic   8 bytes  b"FNPOBS01"
    header  u32 n_points, u32 C, f64 source_resolution_deg
    payload f64 coords as (lat, lon) pairs; f32 values (n_points, C);
            bit-packed presence mask (ceil(n*C/8) bytes, row-major bit order)

write(read(path)) reproduces the file byte-for-byte.  A human-readable JSON
sidecar (<path>.meta.json) is written next to every file; it is never read
back and is not authoritative.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .grids import ChannelInfo, Field, LatLonGrid, ObservationSet

FIELD_MAGIC = b"FNPGRID1"
OBS_MAGIC = b"FNPOBS01"


class FileFormatError(ValueError):
    """Malformed or truncated field/observation file."""


def _read_exact(fh, n: int, section: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FileFormatError(f"truncated file while reading {section}")
    return buf


def _unpack(fh, fmt: str, section: str):
    size = struct.calcsize(fmt)
    return struct.unpack(fmt, _read_exact(fh, size, section))


def write_field(field: Field, path) -> None:
    grid = field.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<III", grid.n_lat, grid.n_lon, field.n_channels))
        fh.write(struct.pack("<dddd", grid.lat_start, grid.lat_step, grid.lon_start, grid.lon_step))
        fh.write(struct.pack(f"<{field.n_channels}I", *(c.group for c in field.channels)))
        for c in field.channels:
            raw = c.name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(field.values, dtype="<f4").tobytes())
    _write_sidecar(path, {
        "kind": "field",
        "shape": [field.n_channels, grid.n_lat, grid.n_lon],
        "channels": [{"name": c.name, "group": c.group} for c in field.channels],
        "grid": {
            "lat_start": grid.lat_start, "lat_step": grid.lat_step,
            "lon_start": grid.lon_start, "lon_step": grid.lon_step,
            "convention": "cell-centered latitudes, west-edge longitudes",
        },
    })


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != FIELD_MAGIC:
            raise FileFormatError(f"magic mismatch: expected {FIELD_MAGIC!r}, got {magic!r}")
        h, w, c = _unpack(fh, "<III", "grid header")
        lat0, dlat, lon0, dlon = _unpack(fh, "<dddd", "grid header")
        groups = _unpack(fh, f"<{c}I", "channel groups") if c else ()
        channels = []
        for i in range(c):
            (nlen,) = _unpack(fh, "<I", "channel names")
            name = _read_exact(fh, nlen, "channel names").decode("utf-8")
            channels.append(ChannelInfo(name, int(groups[i])))
        payload = _read_exact(fh, 4 * c * h * w, "payload")
        extra = fh.read(1)
    if extra:
        raise FileFormatError("trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.isfinite(values).all():
        raise FileFormatError("non-finite values in payload")
    grid = LatLonGrid(h, w, lat0, dlat, lon0, dlon)
    return Field(grid, values, tuple(channels))


def write_obs(obs: ObservationSet, path) -> None:
    n, c = obs.values.shape
    with open(path, "wb") as fh:
        fh.write(OBS_MAGIC)
        fh.write(struct.pack("<IId", n, c, obs.source_resolution))
        fh.write(np.ascontiguousarray(obs.coords, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(obs.values, dtype="<f4").tobytes())
        fh.write(np.packbits(obs.mask.reshape(-1)).tobytes())
    _write_sidecar(path, {
        "kind": "observations",
        "n_points": n,
        "n_channels": c,
        "source_resolution_deg": obs.source_resolution,
    })


def read_obs(path) -> ObservationSet:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != OBS_MAGIC:
            raise FileFormatError(f"magic mismatch: expected {OBS_MAGIC!r}, got {magic!r}")
        n, c, res = _unpack(fh, "<IId", "observation header")
        coords = np.frombuffer(_read_exact(fh, 16 * n, "coords"), dtype="<f8").reshape(n, 2)
        values = np.frombuffer(_read_exact(fh, 4 * n * c, "values"), dtype="<f4").reshape(n, c)
        nbytes = (n * c + 7) // 8
        packed = np.frombuffer(_read_exact(fh, nbytes, "mask"), dtype=np.uint8)
        extra = fh.read(1)
    if extra:
        raise FileFormatError("trailing bytes after mask")
    mask = np.unpackbits(packed, count=n * c).astype(bool).reshape(n, c)
    if not np.isfinite(values[mask]).all():
        raise FileFormatError("non-finite values in payload")
    return ObservationSet(coords[:, 0], coords[:, 1], values, mask, float(res))


def _write_sidecar(path, meta: dict) -> None:
    sidecar = f"{os.fspath(path)}.meta.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
