"""Deferred relighting by shadow-and-shading ratios, plus its loss suite.

Relighting multiplies the source image by a per-pixel, per-channel gain

    gain = (unshadowed_tgt + eps) / (unshadowed_src + eps)
           * (S_tgt + eps) / (S_src + eps)

built from precomputed shadow maps under the source and target domes.
When both lightings coincide bitwise every factor is exactly 1, so the
identity relight is bit-exact.  On synthetic frames rendered with shared
sample sets the ratio algebra cancels and relight(shade(E_src)) equals
shade(E_tgt) to within eps-sized perturbations.

The learned relighting network this stands in for is replaced by the
closed-form compositor; the training-pair machinery (sim-sim, identity,
and optional sim-real pairs, serialized as bundle directories) is kept
so a learned module can be slotted in later.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from relightkit.camera import CameraModel
from relightkit.envlight import EnvMap, env_lookup, read_hdr, write_hdr
from relightkit.errors import FileFormatError, PreconditionError
from relightkit.fb import read_fb, write_fb
from relightkit.geometry import TriangleMesh, build_bvh
from relightkit.render import (GBuffer, SamplerConfig, ShadowMaps, gbuffer,
                               shadow_maps)

log = logging.getLogger(__name__)

# Small enough that gains on unshadowed values > 1e-3 are perturbed by
# less than 1e-5 relative; large enough to keep 0/0 pixels at gain 1.
GAIN_EPS = 1e-8

# 3x3 Sobel-Feldman derivative kernels (sign convention irrelevant to
# the loss, which only sees differences of responses).
SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class LossWeights:
    """Loss mix: the perceptual slot is reserved and reported as zero."""

    lambda_lpips: float = 1.0
    lambda_edge: float = 400.0

    def __post_init__(self):
        if self.lambda_lpips < 0 or self.lambda_edge < 0:
            raise PreconditionError("loss weights must be >= 0")


@dataclass
class RelightInput:
    """Everything the compositor needs for one frame.

    source is the linear-RGB image rendered (or captured) under env_src;
    maps_src / maps_tgt are shadow maps of the same geometry frame under
    the source and target domes.
    """

    source: np.ndarray
    gbuffer: GBuffer
    maps_src: ShadowMaps
    maps_tgt: ShadowMaps
    env_src: EnvMap
    env_tgt: EnvMap

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        if self.source.ndim != 3 or self.source.shape[-1] != 3:
            raise PreconditionError(
                f"source must be HxWx3, got {self.source.shape}")
        if not np.isfinite(self.source).all():
            raise PreconditionError("source contains non-finite values")
        shape = self.source.shape[:2]
        for name, raster in (("gbuffer", self.gbuffer.depth),
                             ("maps_src", self.maps_src.ratio),
                             ("maps_tgt", self.maps_tgt.ratio)):
            if raster.shape[:2] != shape:
                raise PreconditionError(
                    f"{name} raster {raster.shape[:2]} does not match "
                    f"source {shape}")


def relight(inp: RelightInput) -> np.ndarray:
    """Transfer the source image from env_src to env_tgt lighting.

    Non-sky pixels are scaled by the shading/shadow ratio gain and
    clamped below at 0; sky pixels are resampled from the target dome
    along the stored camera rays (linear radiance, same convention the
    renderer uses for sky).
    """
    gain = ((inp.maps_tgt.unshadowed + GAIN_EPS)
            / (inp.maps_src.unshadowed + GAIN_EPS)
            * (inp.maps_tgt.ratio + GAIN_EPS)
            / (inp.maps_src.ratio + GAIN_EPS))
    out = np.maximum(inp.source * gain, 0.0)
    sky = inp.gbuffer.is_sky
    if sky.any():
        out[sky] = env_lookup(inp.env_tgt, inp.gbuffer.ray_dir[sky])
    return out


def relight_losses(pred, target, weights: LossWeights = LossWeights()
                   ) -> dict:
    """Color + Sobel-edge losses between two linear-RGB images.

    color: mean over pixels of the L2 norm of the channel difference.
    edge: mean L2 norm of the difference of Sobel responses, horizontal
    and vertical responses of every channel stacked into one vector.
    total = color + lambda_edge * edge; the perceptual term has no
    backing network here and is reported as 0, never dropped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[..., None]
    if target.ndim == 2:
        target = target[..., None]
    if pred.shape != target.shape:
        raise PreconditionError(
            f"image shapes differ: {pred.shape} vs {target.shape}")
    color = float(np.mean(np.linalg.norm(pred - target, axis=-1)))

    def sobel_stack(img):
        responses = []
        for c in range(img.shape[-1]):
            for kernel in (SOBEL_X, SOBEL_Y):
                responses.append(ndimage.correlate(
                    img[..., c], kernel, mode="nearest"))
        return np.stack(responses, axis=-1)

    edge = float(np.mean(np.linalg.norm(
        sobel_stack(pred) - sobel_stack(target), axis=-1)))
    return {"color": color, "edge": edge, "lpips": 0.0,
            "total": color + weights.lambda_edge * edge}


@dataclass
class TrainingPair:
    """(input bundle, label) tuple for supervising a relighting model."""

    kind: str
    inp: RelightInput
    label: np.ndarray
    meta: dict = field(default_factory=dict)


def make_training_pairs(scene, env_src: EnvMap, env_tgt: EnvMap,
                        camera: CameraModel, sampler: SamplerConfig,
                        real_image=None, frame: int = 0) -> list:
    """Render one frame and emit its supervision pairs.

    scene is a TriangleMesh or any object with a merged_mesh() method.
    Always produces the sim-sim pair (label: shade under env_tgt) and
    the identity pair (target lighting = source, label: the source
    image).  The sim-real pair needs a captured image; without one it is
    skipped with a log notice.
    """
    mesh = scene.merged_mesh() if hasattr(scene, "merged_mesh") else scene
    if not isinstance(mesh, TriangleMesh):
        raise PreconditionError(
            "scene must be a TriangleMesh or expose merged_mesh()")
    bvh = build_bvh(mesh) if len(mesh.faces) else None
    gb = gbuffer(mesh, bvh, camera)
    maps_src = shadow_maps(mesh, bvh, gb, env_src, sampler)
    maps_tgt = shadow_maps(mesh, bvh, gb, env_tgt, sampler)
    source = maps_src.shadowed
    base_meta = {"frame": frame, "seed": sampler.seed, "spp": sampler.spp}
    pairs = [
        TrainingPair(
            kind="sim-sim",
            inp=RelightInput(source, gb, maps_src, maps_tgt,
                             env_src, env_tgt),
            label=maps_tgt.shadowed,
            meta=dict(base_meta, pair="sim-sim")),
        TrainingPair(
            kind="identity",
            inp=RelightInput(source, gb, maps_src, maps_src,
                             env_src, env_src),
            label=source,
            meta=dict(base_meta, pair="identity")),
    ]
    if real_image is not None:
        pairs.append(TrainingPair(
            kind="sim-real",
            inp=RelightInput(source, gb, maps_src, maps_src,
                             env_src, env_src),
            label=np.asarray(real_image, dtype=np.float64),
            meta=dict(base_meta, pair="sim-real", approximate=True)))
    else:
        log.info("no real capture supplied; skipping the sim-real pair")
    return pairs


# ------------------------------------------------------- bundle directories

def _stack_maps(maps: ShadowMaps) -> np.ndarray:
    return np.concatenate([maps.shadowed, maps.unshadowed, maps.ratio],
                          axis=-1)


def _unstack_maps(stacked: np.ndarray) -> ShadowMaps:
    return ShadowMaps(shadowed=stacked[..., 0:3].astype(np.float64),
                      unshadowed=stacked[..., 3:6].astype(np.float64),
                      ratio=stacked[..., 6:9].astype(np.float64))


def _camera_meta(camera: CameraModel) -> dict:
    return {"width": camera.width, "height": camera.height,
            "fx": camera.fx, "fy": camera.fy,
            "cx": camera.cx, "cy": camera.cy,
            "rotation": [float(v) for v in camera.rotation.ravel()],
            "center": [float(v) for v in camera.center]}


def _camera_from_meta(meta: dict) -> CameraModel:
    return CameraModel(width=int(meta["width"]), height=int(meta["height"]),
                       fx=meta["fx"], fy=meta["fy"],
                       cx=meta["cx"], cy=meta["cy"],
                       rotation=np.array(meta["rotation"]).reshape(3, 3),
                       center=np.array(meta["center"]))


def save_bundle(path, pair: TrainingPair, camera: CameraModel) -> None:
    """Serialize one training pair as a directory of raw buffers."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_fb(path / "source.fb", pair.inp.source)
    write_fb(path / "gbuffer.fb", pair.inp.gbuffer.channels())
    write_fb(path / "s_src.fb", _stack_maps(pair.inp.maps_src))
    write_fb(path / "s_tgt.fb", _stack_maps(pair.inp.maps_tgt))
    write_hdr(path / "env_src.hdr", pair.inp.env_src)
    write_hdr(path / "env_tgt.hdr", pair.inp.env_tgt)
    write_fb(path / "label.fb", pair.label)
    meta = dict(pair.meta, kind=pair.kind, camera=_camera_meta(camera))
    (path / "meta").write_text(json.dumps(meta, indent=2) + "\n")


def load_bundle(path) -> TrainingPair:
    """Read a bundle directory back into a TrainingPair.

    The stored camera regenerates ray directions; albedo and tags are
    not part of the persisted G-buffer and come back zeroed.
    """
    path = Path(path)
    meta_path = path / "meta"
    if not meta_path.exists():
        raise FileFormatError(str(meta_path), "bundle meta file missing")
    try:
        meta = json.loads(meta_path.read_text())
        camera = _camera_from_meta(meta["camera"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FileFormatError(str(meta_path),
                              f"bad bundle meta: {exc}") from exc
    gb_channels = read_fb(path / "gbuffer.fb").astype(np.float64)
    inp = RelightInput(
        source=read_fb(path / "source.fb"),
        gbuffer=GBuffer.from_channels(gb_channels, camera),
        maps_src=_unstack_maps(read_fb(path / "s_src.fb")),
        maps_tgt=_unstack_maps(read_fb(path / "s_tgt.fb")),
        env_src=read_hdr(path / "env_src.hdr"),
        env_tgt=read_hdr(path / "env_tgt.hdr"))
    kind = meta.get("kind", "sim-sim")
    extra = {k: v for k, v in meta.items() if k not in ("kind", "camera")}
    return TrainingPair(kind=kind, inp=inp,
                        label=read_fb(path / "label.fb"),
                        meta=extra)
