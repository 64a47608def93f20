"""HDR sky domes: equirectangular maps, the parametric sky model, solar
geometry, and Radiance RGBE file I/O."""

from relightkit.envlight.envmap import (
    EnvMap,
    dir_to_pixel,
    pixel_to_dir,
    env_lookup,
    rotate_env,
    flip_env,
    extract_sun,
    tonemap_ldr,
    inverse_tonemap,
    luminance,
    sky_losses,
    hdr_augment,
)
from relightkit.envlight.hdrio import read_hdr, write_hdr
from relightkit.envlight.skymodel import SkyParams, decode_sky, fit_sky_params
from relightkit.envlight.solar import GeoTime, solar_angles, solar_direction

__all__ = [
    "EnvMap", "dir_to_pixel", "pixel_to_dir", "env_lookup", "rotate_env",
    "flip_env", "extract_sun", "tonemap_ldr", "inverse_tonemap", "luminance",
    "sky_losses", "hdr_augment", "read_hdr", "write_hdr", "SkyParams",
    "decode_sky", "fit_sky_params", "GeoTime", "solar_angles",
    "solar_direction",
]
