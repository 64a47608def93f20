"""Parametric sky decoder: a 64-component latent plus an explicit sun.

The decoder is a fixed, documented function rather than a network: the
first seven latent components control a horizon-to-zenith color gradient
(three zenith channels, three horizon channels, one falloff exponent),
component eight sets a constant gray ground, and the remaining 56
components are ignored.  The sun is a von-Mises-Fisher lobe normalized
to peak 1 and scaled by f_int, added to all channels.  Everything is
clamped non-negative by construction, so any valid parameter set decodes
to a valid environment map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from relightkit.envlight.envmap import EnvMap, pixel_to_dir
from relightkit.errors import PreconditionError

LATENT_SIZE = 64
DEFAULT_KAPPA = 2000.0      # vMF concentration, ~1.5 degree sun radius

# Affine latent-to-base mapping: value = relu(offset + gain * z[i]).
_ZENITH_OFFSET = np.array([0.20, 0.35, 0.65])
_HORIZON_OFFSET = np.array([0.90, 0.80, 0.70])
_COLOR_GAIN = 0.25
_FALLOFF_OFFSET = 1.5
_FALLOFF_GAIN = 0.5
_FALLOFF_FLOOR = 0.05
_GROUND_OFFSET = 0.25
_GROUND_GAIN = 0.15


@dataclass
class SkyParams:
    """Latent sky description: gradient latent, sun intensity, sun direction."""

    z_sky: np.ndarray = field(default_factory=lambda: np.zeros(LATENT_SIZE))
    f_int: float = 0.0
    f_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.z_sky = np.asarray(self.z_sky, dtype=np.float64)
        self.f_dir = np.asarray(self.f_dir, dtype=np.float64)
        if self.z_sky.shape != (LATENT_SIZE,):
            raise PreconditionError(
                f"z_sky must have {LATENT_SIZE} components, got {self.z_sky.shape}")
        if not np.all(np.isfinite(self.z_sky)):
            raise PreconditionError("z_sky contains non-finite values")
        if not np.isfinite(self.f_int) or self.f_int < 0:
            raise PreconditionError("f_int must be finite and >= 0")
        if self.f_dir.shape != (3,) or abs(np.linalg.norm(self.f_dir) - 1.0) > 1e-6:
            raise PreconditionError("f_dir must be a unit 3-vector")


def _relu(x):
    return np.maximum(x, 0.0)


def latent_to_base(z_sky: np.ndarray):
    """Decode the latent into (zenith rgb, horizon rgb, falloff, ground rgb)."""
    zenith = _relu(_ZENITH_OFFSET + _COLOR_GAIN * z_sky[0:3])
    horizon = _relu(_HORIZON_OFFSET + _COLOR_GAIN * z_sky[3:6])
    falloff = _FALLOFF_FLOOR + _relu(_FALLOFF_OFFSET + _FALLOFF_GAIN * z_sky[6])
    ground = np.full(3, _relu(_GROUND_OFFSET + _GROUND_GAIN * z_sky[7]))
    return zenith, horizon, falloff, ground


def base_to_latent(zenith, horizon, falloff, ground) -> np.ndarray:
    """Inverse of latent_to_base; zero values invert exactly through relu."""
    z = np.zeros(LATENT_SIZE)
    z[0:3] = (np.maximum(zenith, 0.0) - _ZENITH_OFFSET) / _COLOR_GAIN
    z[3:6] = (np.maximum(horizon, 0.0) - _HORIZON_OFFSET) / _COLOR_GAIN
    z[6] = (max(falloff, _FALLOFF_FLOOR) - _FALLOFF_FLOOR
            - _FALLOFF_OFFSET) / _FALLOFF_GAIN
    z[7] = (max(float(np.mean(ground)), 0.0) - _GROUND_OFFSET) / _GROUND_GAIN
    return z


def decode_sky(params: SkyParams, height: int = 128,
               kappa: float = DEFAULT_KAPPA) -> EnvMap:
    """Evaluate the parametric sky at every texel center of an H x 2H map."""
    width = 2 * height
    zenith, horizon, falloff, ground = latent_to_base(params.z_sky)
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    dirs = pixel_to_dir(u[None, :], np.broadcast_to(v[:, None], (height, width)),
                        width, height)
    z = dirs[..., 2]
    t = np.clip(z, 0.0, 1.0) ** falloff
    sky = horizon + (zenith - horizon) * t[..., None]
    data = np.where((z < 0.0)[..., None], ground, sky)
    if params.f_int > 0.0:
        align = dirs @ params.f_dir
        data = data + params.f_int * np.exp(kappa * (align - 1.0))[..., None]
    return EnvMap(data)


def fit_sky_params(env: EnvMap, f_dir, f_int: float,
                   sun_exclusion: float = 0.1) -> SkyParams:
    """Least-squares fit of the base gradient given a known sun.

    Upper-hemisphere texels more than `sun_exclusion` radians from f_dir
    constrain the gradient: for each candidate falloff exponent on a
    fixed grid the zenith/horizon colors solve a linear least-squares
    problem, and the exponent with the smallest residual wins.  The
    ground value is the mean of the lower hemisphere.  Latents beyond
    the first eight stay zero.
    """
    f_dir = np.asarray(f_dir, dtype=np.float64)
    h, w = env.height, env.width
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    dirs = pixel_to_dir(u[None, :], np.broadcast_to(v[:, None], (h, w)), w, h)
    z = dirs[..., 2]
    upper = z > 0.0
    away = (dirs @ f_dir) < np.cos(sun_exclusion)
    mask = upper & away
    if np.count_nonzero(mask) < 8:
        mask = upper
    t = np.clip(z[mask], 0.0, 1.0)
    rgb = env.data[mask]

    # relu(1.5 + 0.5 z) + 0.05 spans [0.05, inf); the grid stays inside.
    falloff_grid = np.geomspace(_FALLOFF_FLOOR + 1e-3, 8.0, 64)
    best = None
    for p in falloff_grid:
        tp = t ** p
        design = np.stack([1.0 - tp, tp], axis=1)
        coef, _, _, _ = np.linalg.lstsq(design, rgb, rcond=None)
        resid = float(np.sum((design @ coef - rgb) ** 2))
        if best is None or resid < best[0] - 1e-12:
            best = (resid, p, coef)
    _, falloff, coef = best
    horizon = np.maximum(coef[0], 0.0)
    zenith = np.maximum(coef[1], 0.0)
    lower = env.data[z < 0.0]
    ground = lower.mean() if lower.size else 0.0
    z_sky = base_to_latent(zenith, horizon, falloff, np.full(3, ground))
    return SkyParams(z_sky=z_sky, f_int=float(f_int),
                     f_dir=f_dir / np.linalg.norm(f_dir))
