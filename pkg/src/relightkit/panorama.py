"""Multi-camera panorama reconstruction.

Depth rendering gives each source pixel a 3D point (or a pure direction
for sky); forward splatting re-expresses those points relative to a
single panorama origin and accumulates them into the nearest
equirectangular texel, averaging collisions. A deterministic Laplacian
diffusion pass fills the unobserved texels, standing in for a learned
inpainter; outputs are labeled accordingly by the CLI layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from relightkit.camera import CameraModel
from relightkit.envlight.envmap import dir_to_pixel, nearest_texel
from relightkit.errors import PreconditionError
from relightkit.geometry import Bvh, TriangleMesh, intersect

__all__ = [
    "DepthMap",
    "Panorama",
    "render_depth",
    "stitch",
    "fill_holes",
]

FILL_TOLERANCE = 1e-4


@dataclass
class DepthMap:
    """Per-pixel ray distances in meters; +inf marks sky (no geometry)."""

    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise PreconditionError(
                f"depth must be HxW, got shape {self.depth.shape}")
        bad = np.isnan(self.depth) | (self.depth <= 0.0)
        if bad.any():
            raise PreconditionError(
                "depth values must be positive or +inf (sky)")

    @property
    def is_sky(self) -> np.ndarray:
        return np.isinf(self.depth)


@dataclass
class Panorama:
    """Equirectangular LDR image with per-texel observation counts.

    image holds the accumulated mean where count > 0 and zero elsewhere;
    mask is count > 0.
    """

    image: np.ndarray
    count: np.ndarray
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.count = np.asarray(self.count, dtype=np.int64)
        if self.image.ndim != 3 or self.image.shape[-1] != 3:
            raise PreconditionError(
                f"panorama image must be HxWx3, got {self.image.shape}")
        if self.count.shape != self.image.shape[:2]:
            raise PreconditionError("count shape must match image")
        if not np.isfinite(self.image).all():
            raise PreconditionError("panorama image must be finite")
        if (self.count < 0).any():
            raise PreconditionError("counts must be non-negative")
        self.mask = self.count > 0

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def render_depth(mesh: TriangleMesh, bvh: Bvh | None,
                 camera: CameraModel) -> DepthMap:
    """Nearest-hit distance along each pixel-center ray; misses -> +inf."""
    if mesh.n_faces == 0:
        return DepthMap(np.full((camera.height, camera.width), np.inf))
    dirs = camera.pixel_rays().reshape(-1, 3)
    origins = np.broadcast_to(camera.center, dirs.shape)
    hit = intersect(mesh, bvh, origins, dirs)
    # Unit directions make the ray parameter a metric distance.
    return DepthMap(hit.t.reshape(camera.height, camera.width))


def stitch(images, depths, cameras, pano_height: int = 512,
           origin=None) -> Panorama:
    """Forward-splat source pixels into an equirectangular panorama.

    Each source pixel unprojects through its depth to a world point
    (sky pixels stay pure directions), is re-expressed relative to the
    panorama origin (first camera center unless given), and lands in the
    nearest texel. Collisions average; summation runs in list order.
    """
    if not len(cameras):
        raise PreconditionError("stitch needs at least one camera")
    if len(images) != len(cameras) or len(depths) != len(cameras):
        raise PreconditionError(
            f"got {len(images)} images, {len(depths)} depths, "
            f"{len(cameras)} cameras; lengths must match")
    if pano_height < 1:
        raise PreconditionError("pano_height must be >= 1")
    if origin is None:
        origin = cameras[0].center
    origin = np.asarray(origin, dtype=np.float64)

    height, width = int(pano_height), 2 * int(pano_height)
    acc = np.zeros((height, width, 3))
    count = np.zeros((height, width), dtype=np.int64)
    for image, depth, cam in zip(images, depths, cameras):
        image = np.asarray(image, dtype=np.float64)
        if not isinstance(depth, DepthMap):
            depth = DepthMap(depth)
        if image.shape != (cam.height, cam.width, 3):
            raise PreconditionError(
                f"image shape {image.shape} does not match its camera "
                f"({cam.height}x{cam.width})")
        if depth.depth.shape != (cam.height, cam.width):
            raise PreconditionError(
                f"depth shape {depth.depth.shape} does not match its image")
        if image.min() < 0.0 or image.max() > 1.0:
            raise PreconditionError("images must be LDR in [0, 1]")
        dirs = cam.pixel_rays().reshape(-1, 3)
        d = depth.depth.reshape(-1)
        sky = np.isinf(d)
        rel = np.where(sky[:, None], dirs,
                       cam.center + np.where(sky, 0.0, d)[:, None] * dirs
                       - origin)
        rel = rel / np.maximum(np.linalg.norm(rel, axis=1, keepdims=True),
                               1e-300)
        u, v = dir_to_pixel(rel, width, height)
        ix, iy = nearest_texel(u, v, width, height)
        np.add.at(acc, (iy, ix), image.reshape(-1, 3))
        np.add.at(count, (iy, ix), 1)

    mean = np.zeros_like(acc)
    seen = count > 0
    mean[seen] = acc[seen] / count[seen, None]
    return Panorama(image=mean, count=count)


def _neighbor_mean(img: np.ndarray) -> np.ndarray:
    """4-neighbor mean: azimuth wraps, zenith/nadir rows replicate."""
    left = np.roll(img, 1, axis=1)
    right = np.roll(img, -1, axis=1)
    up = np.concatenate([img[:1], img[:-1]], axis=0)
    down = np.concatenate([img[1:], img[-1:]], axis=0)
    return 0.25 * (left + right + up + down)


def fill_holes(pano: Panorama, iterations: int | None = None) -> np.ndarray:
    """Diffuse observed values into the holes; returns a full HxWx3 image.

    Unobserved texels are repeatedly replaced by the mean of their four
    neighbors while observed texels stay fixed, i.e. Jacobi iteration on
    the discrete Laplace equation. With `iterations` unset it runs until
    the largest per-step update drops below FILL_TOLERANCE. Each update
    is a convex combination, so the fill never leaves the observed value
    range.
    """
    if not pano.mask.any():
        raise PreconditionError("cannot fill a fully-unobserved panorama")
    img = pano.image.copy()
    hole = ~pano.mask
    if not hole.any():
        return img
    img[hole] = pano.image[pano.mask].mean(axis=0)
    step = 0
    while iterations is None or step < iterations:
        nbr = _neighbor_mean(img)
        delta = float(np.abs(nbr[hole] - img[hole]).max())
        img[hole] = nbr[hole]
        step += 1
        if iterations is None and delta < FILL_TOLERANCE:
            break
    return img
