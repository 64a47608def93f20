"""Raw binary containers: FB01 image buffers and SG01 distance grids.

FB01 carries every intermediate raster (G-buffer channels, shadow maps,
HDR renders) without quantization:

    magic "FB01" | u32 width | u32 height | u32 channels | f32 payload

All integers and floats are little-endian; the payload is row-major and
channel-interleaved, exactly ``W*H*C*4`` bytes.  Values must be finite on
write; the reader reports truncation as expected-vs-actual byte counts.

SG01 is the same idea for signed-distance lattices, kept at float64 so a
fit -> write -> read -> extract pipeline matches the in-process result:

    magic "SG01" | u32 nx | u32 ny | u32 nz | 6 x f64 bounds | f64 payload

with node-lattice payload of (nx+1)(ny+1)(nz+1) values.
"""

from __future__ import annotations

import struct

import numpy as np

from relightkit.errors import FileFormatError, PreconditionError
from relightkit.geometry import SdfGrid

FB_MAGIC = b"FB01"
SG_MAGIC = b"SG01"

_FB_HEADER = struct.Struct("<4sIII")
_SG_HEADER = struct.Struct("<4sIII6d")


def write_fb(path, image) -> None:
    """Write an (H, W) or (H, W, C) float raster as an FB01 file."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise PreconditionError(
            f"FB payload must be 2-D or 3-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise PreconditionError("FB payload contains non-finite values")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(_FB_HEADER.pack(FB_MAGIC, w, h, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_fb(path) -> np.ndarray:
    """Read an FB01 file back as an (H, W, C) float32 array."""
    with open(path, "rb") as f:
        header = f.read(_FB_HEADER.size)
        if len(header) < _FB_HEADER.size:
            raise FileFormatError(path, "truncated FB header")
        magic, w, h, c = _FB_HEADER.unpack(header)
        if magic != FB_MAGIC:
            raise FileFormatError(path, f"bad magic {magic!r}, want b'FB01'")
        if w == 0 or h == 0 or c == 0:
            raise FileFormatError(path, f"zero dimension in {w}x{h}x{c}")
        expected = w * h * c * 4
        payload = f.read(expected)
        trailing = f.read(1)
    if len(payload) < expected:
        raise FileFormatError(
            path, f"truncated payload: expected {expected} bytes, "
                  f"got {len(payload)}")
    if trailing:
        raise FileFormatError(
            path, f"trailing data after {expected} payload bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return np.ascontiguousarray(data)


def write_sdf_grid(path, grid: SdfGrid) -> None:
    if not np.isfinite(grid.values).all():
        raise PreconditionError("SDF grid contains non-finite values")
    nx, ny, nz = grid.resolution
    with open(path, "wb") as f:
        f.write(_SG_HEADER.pack(SG_MAGIC, nx, ny, nz,
                                *grid.bounds_min, *grid.bounds_max))
        f.write(np.ascontiguousarray(
            grid.values, dtype="<f8").tobytes())


def read_sdf_grid(path) -> SdfGrid:
    with open(path, "rb") as f:
        header = f.read(_SG_HEADER.size)
        if len(header) < _SG_HEADER.size:
            raise FileFormatError(path, "truncated SG header")
        fields = _SG_HEADER.unpack(header)
        if fields[0] != SG_MAGIC:
            raise FileFormatError(
                path, f"bad magic {fields[0]!r}, want b'SG01'")
        nx, ny, nz = fields[1:4]
        lo, hi = np.array(fields[4:7]), np.array(fields[7:10])
        n_nodes = (nx + 1) * (ny + 1) * (nz + 1)
        expected = n_nodes * 8
        payload = f.read(expected)
        trailing = f.read(1)
    if len(payload) < expected:
        raise FileFormatError(
            path, f"truncated payload: expected {expected} bytes, "
                  f"got {len(payload)}")
    if trailing:
        raise FileFormatError(
            path, f"trailing data after {expected} payload bytes")
    values = np.frombuffer(payload, dtype="<f8").reshape(
        nx + 1, ny + 1, nz + 1)
    return SdfGrid(bounds_min=lo, bounds_max=hi,
                   values=values.copy())
