"""Equirectangular HDR environment maps and the operations on them.

Layout: row v runs from the zenith (v = 0) to the nadir (v = H), column u
covers azimuth with +x at the center column.  The map must be twice as
wide as it is tall.  Texel (ix, iy) covers the half-open pixel square
[ix, ix+1) x [iy, iy+1); nearest-texel lookup floors the continuous
coordinates, wrapping u and clamping v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from relightkit import rng
from relightkit.errors import PreconditionError

TWO_PI = 2.0 * np.pi

# Rec. 709 luma weights, used everywhere a scalar brightness is needed.
LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class EnvMap:
    """(H, 2H, 3) linear HDR radiance, finite and non-negative."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise PreconditionError(
                f"environment map must be (H, W, 3), got {self.data.shape}")
        h, w, _ = self.data.shape
        if w != 2 * h:
            raise PreconditionError(
                f"environment map must satisfy W = 2H, got {w}x{h}")
        if not np.all(np.isfinite(self.data)):
            raise PreconditionError("environment map contains non-finite values")
        if np.any(self.data < 0):
            raise PreconditionError("environment map contains negative radiance")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def constant(cls, height: int, value) -> "EnvMap":
        value = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.tile(value, (height, 2 * height, 1)))

    def copy(self) -> "EnvMap":
        return EnvMap(self.data.copy())


def dir_to_pixel(directions, width: int, height: int):
    """Map unit directions to continuous (u, v) pixel coordinates.

    v = acos(z)/pi * H, u = (atan2(y, x)/(2pi) + 0.5) * W, so +x lands at
    the image center (W/2, H/2) and +z on the top row.
    """
    d = np.asarray(directions, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    u = (phi / TWO_PI + 0.5) * width
    v = theta / np.pi * height
    return u, v


def pixel_to_dir(u, v, width: int, height: int) -> np.ndarray:
    """Inverse of dir_to_pixel for continuous pixel coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    phi = (u / width - 0.5) * TWO_PI
    theta = v / height * np.pi
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)],
                    axis=-1)


def nearest_texel(u, v, width: int, height: int):
    """Integer texel indices for continuous coords: wrap u, clamp v."""
    ix = np.mod(np.floor(u).astype(np.int64), width)
    iy = np.clip(np.floor(v).astype(np.int64), 0, height - 1)
    return ix, iy


@njit(cache=True, inline="always")
def dir_to_texel_scalar(x, y, z, width, height):
    """Scalar twin of dir_to_pixel + nearest_texel for compiled kernels."""
    zc = min(1.0, max(-1.0, z))
    theta = np.arccos(zc)
    phi = np.arctan2(y, x)
    ix = int(np.floor((phi / TWO_PI + 0.5) * width)) % width
    iy = int(np.floor(theta / np.pi * height))
    if iy < 0:
        iy = 0
    elif iy > height - 1:
        iy = height - 1
    return ix, iy


def env_lookup(env: EnvMap, directions) -> np.ndarray:
    """Nearest-texel radiance for unit directions, shape (..., 3)."""
    u, v = dir_to_pixel(directions, env.width, env.height)
    ix, iy = nearest_texel(u, v, env.width, env.height)
    return env.data[iy, ix]


def rotate_env(env: EnvMap, yaw: float) -> EnvMap:
    """Rotate the environment about +z by `yaw` radians.

    A feature at azimuth a moves to a + yaw, i.e. columns shift right.
    Integer-column yaws are exact rolls; anything else resamples linearly
    along u with wrap, which preserves row sums.
    """
    w = env.width
    shift = yaw / TWO_PI * w
    nearest = np.rint(shift)
    if abs(shift - nearest) < 1e-9:
        return EnvMap(np.roll(env.data, int(nearest) % w, axis=1))
    lo = int(np.floor(shift))
    frac = shift - lo
    a = np.roll(env.data, lo % w, axis=1)
    b = np.roll(env.data, (lo + 1) % w, axis=1)
    return EnvMap((1.0 - frac) * a + frac * b)


def flip_env(env: EnvMap) -> EnvMap:
    """Mirror azimuth by reversing column order; exact involution."""
    return EnvMap(env.data[:, ::-1])


def luminance(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ LUMA


def extract_sun(env: EnvMap):
    """Locate the sun as the maximum-luminance texel.

    Returns (f_dir, f_int): the unit direction through that texel's
    center and its luminance.  Ties resolve to the smallest (v, u).
    """
    lum = luminance(env.data)
    flat = int(np.argmax(lum))
    iy, ix = divmod(flat, env.width)
    f_dir = pixel_to_dir(ix + 0.5, iy + 0.5, env.width, env.height)
    return f_dir, float(lum[iy, ix])


def tonemap_ldr(hdr, exposure: float = 1.0) -> np.ndarray:
    """Gamma-2.2 tonemap to [0, 1]: clamp((exposure * hdr)^(1/2.2))."""
    if exposure <= 0:
        raise PreconditionError("exposure must be positive")
    scaled = np.maximum(np.asarray(hdr, dtype=np.float64) * exposure, 0.0)
    return np.minimum(scaled ** (1.0 / 2.2), 1.0)


def inverse_tonemap(ldr, exposure: float = 1.0) -> np.ndarray:
    """Undo tonemap_ldr for unclipped values: ldr^2.2 / exposure."""
    if exposure <= 0:
        raise PreconditionError("exposure must be positive")
    return np.clip(np.asarray(ldr, dtype=np.float64), 0.0, 1.0) ** 2.2 / exposure


def sky_losses(pred_env: EnvMap, pred_params, target_env: EnvMap,
               target_params) -> dict:
    """Sky-estimation losses: sun angle (degrees), log-peak L1, log-map L2.

    The params arguments only need f_dir / f_int attributes.
    """
    if pred_env.data.shape != target_env.data.shape:
        raise PreconditionError("environment maps must share a resolution")
    cosang = float(np.clip(np.dot(pred_params.f_dir, target_params.f_dir),
                           -1.0, 1.0))
    angular = np.degrees(np.arccos(cosang))
    peak = abs(np.log1p(pred_params.f_int) - np.log1p(target_params.f_int))
    diff = np.log1p(pred_env.data) - np.log1p(target_env.data)
    recon = float(np.mean(diff * diff))
    return {"angular": float(angular), "peak": float(peak), "recon": recon}


def hdr_augment(env: EnvMap, seed: int) -> EnvMap:
    """Deterministic training-time augmentation keyed by seed.

    Applies, in order: log-uniform exposure scale in [0.5, 2], an
    integer-column azimuth rotation, and a horizontal flip with
    probability 0.5.  All draws come from the counter-based stream, so
    the same seed always produces the same map.
    """
    s = rng.stream_seed_py(seed, rng.STREAM_AUGMENT)
    u = rng.u01_array(s, 0, 0, np.arange(3))
    exposure = 2.0 ** (2.0 * u[0] - 1.0)
    yaw_cols = min(int(u[1] * env.width), env.width - 1)
    out = np.roll(env.data * exposure, yaw_cols, axis=1)
    if u[2] < 0.5:
        out = out[:, ::-1]
    return EnvMap(out)
