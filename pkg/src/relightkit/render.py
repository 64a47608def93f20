"""Physically-based render passes over the digital twin.

Produces the 8-channel G-buffer (position, depth, normal, ambient
occlusion), Lambertian renders under an environment map with and
without shadow visibility, and their per-pixel ratio map S used by the
relighting compositor.

Determinism is load-bearing here: every random draw is a stateless hash
of (seed, pixel, sample, dimension), pixels never share accumulators,
and the shadowed/unshadowed pair consumes the identical sample set, so
S is bounded by 1 bitwise and outputs do not depend on thread count.
Direct lighting only; interreflection is out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from relightkit.camera import CameraModel
from relightkit.envlight.envmap import EnvMap, dir_to_texel_scalar, env_lookup
from relightkit.errors import PreconditionError
from relightkit.geometry import Bvh, TriangleMesh, intersect, mesh_diameter
from relightkit.geometry.trace import any_hit_scalar
from relightkit.rng import STREAM_AO, STREAM_SHADE, stream_seed_py, u01

__all__ = [
    "SamplerConfig",
    "GBuffer",
    "ShadowMaps",
    "gbuffer",
    "ambient_occlusion",
    "shade",
    "shadow_maps",
    "warmup",
]

RATIO_EPS = 1e-6
ORIGIN_OFFSET_SCALE = 1e-4
GBUFFER_CHANNELS = 8
SKY_DEPTH_SENTINEL = -1.0  # on-disk stand-in for +inf


@dataclass(frozen=True)
class SamplerConfig:
    """Per-pixel hemisphere sampling: count, seed, stratification.

    spp perfect squares stratify on an automatic g x g grid; other
    counts run unstratified. An explicit strata pair overrides, and spp
    must then be a multiple of gx*gy (samples cycle through the cells).
    """

    spp: int = 256
    seed: int = 0
    strata: tuple | None = None

    def __post_init__(self):
        if self.spp < 1:
            raise PreconditionError("spp must be >= 1")
        if self.strata is not None:
            gx, gy = self.strata
            if gx < 1 or gy < 1:
                raise PreconditionError("strata dims must be >= 1")
            if self.spp % (gx * gy) != 0:
                raise PreconditionError(
                    f"spp {self.spp} must be a multiple of {gx}x{gy}")

    def grid(self) -> tuple:
        if self.strata is not None:
            return int(self.strata[0]), int(self.strata[1])
        g = math.isqrt(self.spp)
        return (g, g) if g * g == self.spp else (1, 1)


@dataclass
class GBuffer:
    """Per-pixel geometry rasters; exactly eight scalar channels persist.

    The serialized layout is [px, py, pz, depth, nx, ny, nz, ao]. Sky
    pixels carry zero position/normal, ao = 1, and +inf depth in memory
    (the float container stores SKY_DEPTH_SENTINEL instead). albedo,
    ray_dir, and tag ride along in memory for the shading and relight
    passes but are not part of the eight channels.
    """

    position: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    ao: np.ndarray
    albedo: np.ndarray
    ray_dir: np.ndarray
    tag: np.ndarray

    def __post_init__(self):
        h, w = self.depth.shape
        expect = {"position": (h, w, 3), "normal": (h, w, 3),
                  "ao": (h, w), "albedo": (h, w, 3),
                  "ray_dir": (h, w, 3), "tag": (h, w)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise PreconditionError(
                    f"gbuffer {name} has shape {getattr(self, name).shape}, "
                    f"expected {shape}")
        if self.ao.min() < 0.0 or self.ao.max() > 1.0:
            raise PreconditionError("ao must lie in [0, 1]")
        sky = self.is_sky
        if sky.any():
            if not np.all(self.ao[sky] == 1.0):
                raise PreconditionError("sky pixels must have ao = 1")
            if np.any(self.normal[sky] != 0.0):
                raise PreconditionError("sky pixels must have zero normal")
        lens = np.linalg.norm(self.normal[~sky], axis=-1)
        if lens.size and not np.allclose(lens, 1.0, atol=1e-9):
            raise PreconditionError("hit normals must be unit length")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def is_sky(self) -> np.ndarray:
        return np.isinf(self.depth)

    def channels(self) -> np.ndarray:
        """The eight persistent channels, sky depth mapped to its sentinel."""
        depth = np.where(self.is_sky, SKY_DEPTH_SENTINEL, self.depth)
        return np.concatenate([
            self.position,
            depth[..., None],
            self.normal,
            self.ao[..., None],
        ], axis=-1)

    @classmethod
    def from_channels(cls, channels: np.ndarray,
                      camera: CameraModel) -> "GBuffer":
        """Rebuild from the persisted channels plus the camera.

        Ray directions regenerate from the camera; albedo and tags are
        not persisted and come back zeroed.
        """
        channels = np.asarray(channels, dtype=np.float64)
        if channels.ndim != 3 or channels.shape[-1] != GBUFFER_CHANNELS:
            raise PreconditionError(
                f"expected HxWx{GBUFFER_CHANNELS} channels, "
                f"got {channels.shape}")
        if channels.shape[:2] != (camera.height, camera.width):
            raise PreconditionError("channel raster does not match camera")
        depth = channels[..., 3].copy()
        depth[depth == SKY_DEPTH_SENTINEL] = np.inf
        h, w = depth.shape
        # Quantized storage (e.g. float32 FB files) perturbs unit length;
        # renormalize hit normals, leave zeroed sky normals alone.
        normal = channels[..., 4:7].copy()
        norms = np.linalg.norm(normal, axis=-1, keepdims=True)
        hit_rows = norms[..., 0] > 0.5
        normal[hit_rows] /= norms[hit_rows]
        return cls(position=channels[..., 0:3].copy(), depth=depth,
                   normal=normal, ao=channels[..., 7].copy(),
                   albedo=np.zeros((h, w, 3)), ray_dir=camera.pixel_rays(),
                   tag=np.full((h, w), -1, dtype=np.int32))


@dataclass
class ShadowMaps:
    """Shadowed/unshadowed render pair and their per-channel ratio S."""

    shadowed: np.ndarray
    unshadowed: np.ndarray
    ratio: np.ndarray

    def __post_init__(self):
        if self.ratio.min() < 0.0 or self.ratio.max() > 1.0:
            raise PreconditionError("shadow ratio must lie in [0, 1]")


def gbuffer(mesh: TriangleMesh, bvh: Bvh | None,
            camera: CameraModel) -> GBuffer:
    """Trace pixel-center rays into position/depth/normal (+albedo, tags)."""
    h, w = camera.height, camera.width
    ray_dir = camera.pixel_rays()
    if mesh.n_faces == 0:
        return GBuffer(position=np.zeros((h, w, 3)),
                       depth=np.full((h, w), np.inf),
                       normal=np.zeros((h, w, 3)), ao=np.ones((h, w)),
                       albedo=np.zeros((h, w, 3)), ray_dir=ray_dir,
                       tag=np.full((h, w), -1, dtype=np.int32))
    dirs = ray_dir.reshape(-1, 3)
    origins = np.broadcast_to(camera.center, dirs.shape)
    hit = intersect(mesh, bvh, origins, dirs)
    ok = hit.valid
    depth = hit.t.reshape(h, w)
    position = np.zeros((len(dirs), 3))
    position[ok] = camera.center + hit.t[ok, None] * dirs[ok]
    tag = np.full(len(dirs), -1, dtype=np.int32)
    tag[ok] = mesh.tags[hit.tri[ok]]
    ao = np.where(np.isinf(depth), 1.0, 0.0)
    # Shading normals face the viewer; a backface hit (e.g. the inside
    # of a closed box) otherwise samples the hemisphere behind the wall.
    normal = hit.normal.copy()
    facing_away = np.einsum("nd,nd->n", normal, dirs) > 0.0
    normal[facing_away] *= -1.0
    return GBuffer(position=position.reshape(h, w, 3), depth=depth,
                   normal=normal.reshape(h, w, 3), ao=ao,
                   albedo=hit.albedo.reshape(h, w, 3), ray_dir=ray_dir,
                   tag=tag.reshape(h, w))


# ------------------------------------------------------------------ kernels

@njit(cache=True, inline="always")
def _onb(nx, ny, nz):
    """Branch-stable orthonormal tangent/bitangent for a unit normal."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx,
            b, sign + ny * ny * a, -ny)


@njit(cache=True, inline="always")
def _cosine_dir(u1, u2, nx, ny, nz):
    """Cosine-weighted hemisphere direction about the normal (pdf cos/pi)."""
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    lx = r * math.cos(phi)
    ly = r * math.sin(phi)
    lz = math.sqrt(max(0.0, 1.0 - u1))
    tx, ty, tz, bx, by, bz = _onb(nx, ny, nz)
    return (lx * tx + ly * bx + lz * nx,
            lx * ty + ly * by + lz * ny,
            lx * tz + ly * bz + lz * nz)


@njit(cache=True, inline="always")
def _stratified_u(seed, pix, j, gx, gy):
    """Two jittered uniforms; sample j cycles through the strata cells."""
    cell = j % (gx * gy)
    sx = cell % gx
    sy = cell // gx
    u1 = (sx + u01(seed, pix, j, 0)) / gx
    u2 = (sy + u01(seed, pix, j, 1)) / gy
    return u1, u2


@njit(cache=True, parallel=True)
def _ao_kernel(position, normal, sky, spp, gx, gy, seed, eps, t_max,
               bmin, bmax, left, right, start, count, v0, e1, e2, out):
    n_pix = position.shape[0]
    for pix in prange(n_pix):
        if sky[pix]:
            out[pix] = 1.0
            continue
        nx, ny, nz = normal[pix, 0], normal[pix, 1], normal[pix, 2]
        ox = position[pix, 0] + eps * nx
        oy = position[pix, 1] + eps * ny
        oz = position[pix, 2] + eps * nz
        open_count = 0
        for j in range(spp):
            u1, u2 = _stratified_u(seed, pix, j, gx, gy)
            dx, dy, dz = _cosine_dir(u1, u2, nx, ny, nz)
            if not any_hit_scalar(ox, oy, oz, dx, dy, dz, 0.0, t_max,
                                  bmin, bmax, left, right, start, count,
                                  v0, e1, e2):
                open_count += 1
        out[pix] = open_count / spp


@njit(cache=True, parallel=True)
def _shade_kernel(position, normal, albedo, sky, ray_dir, env, spp, gx, gy,
                  seed, eps, t_max, with_shadows,
                  bmin, bmax, left, right, start, count, v0, e1, e2,
                  out_sh, out_unsh):
    """Lambertian pair estimator with one shared sample set.

    out_unsh accumulates every env sample, out_sh only the visible
    ones; the identical term sequence makes out_sh <= out_unsh hold
    bitwise. Sky pixels copy the env texel along the camera ray.
    """
    env_h, env_w = env.shape[0], env.shape[1]
    n_pix = position.shape[0]
    for pix in prange(n_pix):
        if sky[pix]:
            ix, iy = dir_to_texel_scalar(ray_dir[pix, 0], ray_dir[pix, 1],
                                         ray_dir[pix, 2], env_w, env_h)
            for ch in range(3):
                out_sh[pix, ch] = env[iy, ix, ch]
                out_unsh[pix, ch] = env[iy, ix, ch]
            continue
        nx, ny, nz = normal[pix, 0], normal[pix, 1], normal[pix, 2]
        ox = position[pix, 0] + eps * nx
        oy = position[pix, 1] + eps * ny
        oz = position[pix, 2] + eps * nz
        acc_sh_r = acc_sh_g = acc_sh_b = 0.0
        acc_un_r = acc_un_g = acc_un_b = 0.0
        for j in range(spp):
            u1, u2 = _stratified_u(seed, pix, j, gx, gy)
            dx, dy, dz = _cosine_dir(u1, u2, nx, ny, nz)
            ix, iy = dir_to_texel_scalar(dx, dy, dz, env_w, env_h)
            er = env[iy, ix, 0]
            eg = env[iy, ix, 1]
            eb = env[iy, ix, 2]
            visible = 1.0
            if with_shadows and any_hit_scalar(
                    ox, oy, oz, dx, dy, dz, 0.0, t_max,
                    bmin, bmax, left, right, start, count, v0, e1, e2):
                visible = 0.0
            acc_un_r += er
            acc_un_g += eg
            acc_un_b += eb
            acc_sh_r += er * visible
            acc_sh_g += eg * visible
            acc_sh_b += eb * visible
        kr = albedo[pix, 0]
        kg = albedo[pix, 1]
        kb = albedo[pix, 2]
        out_sh[pix, 0] = kr * (acc_sh_r / spp)
        out_sh[pix, 1] = kg * (acc_sh_g / spp)
        out_sh[pix, 2] = kb * (acc_sh_b / spp)
        out_unsh[pix, 0] = kr * (acc_un_r / spp)
        out_unsh[pix, 1] = kg * (acc_un_g / spp)
        out_unsh[pix, 2] = kb * (acc_un_b / spp)


# ----------------------------------------------------------------- wrappers

def _bvh_arrays(bvh: Bvh):
    return (bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
            bvh.start, bvh.count, bvh.tri_v0, bvh.tri_e1, bvh.tri_e2)


def _flat(gb: GBuffer):
    return (np.ascontiguousarray(gb.position.reshape(-1, 3)),
            np.ascontiguousarray(gb.normal.reshape(-1, 3)),
            np.ascontiguousarray(gb.albedo.reshape(-1, 3)),
            np.ascontiguousarray(gb.is_sky.reshape(-1)),
            np.ascontiguousarray(gb.ray_dir.reshape(-1, 3)))


def ambient_occlusion(mesh: TriangleMesh, bvh: Bvh | None, gb: GBuffer,
                      sampler: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Unoccluded fraction of cosine-weighted hemisphere rays per pixel.

    Rays start ORIGIN_OFFSET_SCALE * scene diameter above the surface
    and extend one scene diameter; sky pixels are fully open (ao = 1).
    Draws come from the AO stream keyed by (seed, pixel, sample).
    """
    if mesh.n_faces == 0 or not (~gb.is_sky).any():
        return np.ones((gb.height, gb.width))
    diameter = mesh_diameter(mesh)
    position, normal, _, sky, _ = _flat(gb)
    gx, gy = sampler.grid()
    out = np.empty(position.shape[0])
    _ao_kernel(position, normal, sky, sampler.spp, gx, gy,
               np.uint64(stream_seed_py(sampler.seed, STREAM_AO)),
               ORIGIN_OFFSET_SCALE * diameter, diameter,
               *_bvh_arrays(bvh), out)
    return out.reshape(gb.height, gb.width)


def _shade_pair(mesh, bvh, gb, env, sampler, with_shadows):
    h, w = gb.height, gb.width
    if mesh.n_faces == 0 or not (~gb.is_sky).any():
        sky_rgb = env_lookup(env, gb.ray_dir)
        return sky_rgb.copy(), sky_rgb.copy()
    diameter = mesh_diameter(mesh)
    position, normal, albedo, sky, ray_dir = _flat(gb)
    gx, gy = sampler.grid()
    out_sh = np.empty((h * w, 3))
    out_unsh = np.empty((h * w, 3))
    _shade_kernel(position, normal, albedo, sky, ray_dir,
                  np.ascontiguousarray(env.data), sampler.spp, gx, gy,
                  np.uint64(stream_seed_py(sampler.seed, STREAM_SHADE)),
                  ORIGIN_OFFSET_SCALE * diameter, diameter, with_shadows,
                  *_bvh_arrays(bvh), out_sh, out_unsh)
    return out_sh.reshape(h, w, 3), out_unsh.reshape(h, w, 3)


def shade(mesh: TriangleMesh, bvh: Bvh | None, gb: GBuffer, env: EnvMap,
          with_shadows: bool = True,
          sampler: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Lambertian render: albedo * mean(E(w_j) * V(w_j)) per pixel.

    Cosine-hemisphere sampling cancels the cosine/pdf factors, so the
    estimator is the plain mean of visible env radiance. V is forced to
    1 when with_shadows is false, using the same sample directions, so
    the two variants agree bitwise wherever nothing occludes.
    """
    shadowed, unshadowed = _shade_pair(mesh, bvh, gb, env, sampler,
                                       with_shadows)
    return shadowed if with_shadows else unshadowed


def shadow_maps(mesh: TriangleMesh, bvh: Bvh | None, gb: GBuffer,
                env: EnvMap,
                sampler: SamplerConfig = SamplerConfig()) -> ShadowMaps:
    """Shadowed/unshadowed pair and S = shadowed/max(unshadowed, eps).

    One kernel pass accumulates both images from the identical sample
    set, which pins S into [0, 1] bitwise; sky pixels get S = 1.
    """
    shadowed, unshadowed = _shade_pair(mesh, bvh, gb, env, sampler,
                                       with_shadows=True)
    ratio = shadowed / np.maximum(unshadowed, RATIO_EPS)
    ratio[gb.is_sky] = 1.0
    return ShadowMaps(shadowed=shadowed, unshadowed=unshadowed, ratio=ratio)


def warmup() -> None:
    """Compile the render kernels on a micro scene (call before timing)."""
    from relightkit.camera import look_at
    from relightkit.geometry import build_bvh, plane_mesh

    mesh = plane_mesh(size=2.0)
    bvh = build_bvh(mesh)
    cam = look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], width=2, height=2,
                  fx=2.0, fy=2.0)
    gb = gbuffer(mesh, bvh, cam)
    sampler = SamplerConfig(spp=4, seed=0)
    ambient_occlusion(mesh, bvh, gb, sampler)
    env = EnvMap.constant(4, 1.0)
    shadow_maps(mesh, bvh, gb, env, sampler)
    shade(mesh, bvh, gb, env, False, sampler)
