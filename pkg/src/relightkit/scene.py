"""Editable twin model: background, posed actors, rig, and lighting.

A Scene is the unit the simulator consumes: a static background mesh,
dynamic actors with per-frame rigid poses, one camera per frame, and the
source lighting dome.  Edits (insert, remove, retime, relight, move the
rig) are applied functionally: apply_edits returns a new Scene and never
touches its input, so scripts can be replayed and compared.

Per-frame render geometry merges the background with every actor posed
at that frame; triangle tags record provenance (0 = background, i + 1 =
actors[i]).  Poses between trajectory keys interpolate linearly in
translation and spherically in rotation; outside the key range the
nearest key holds.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from relightkit.camera import CameraModel
from relightkit.envlight import EnvMap, tonemap_ldr
from relightkit.errors import (PreconditionError, RelightKitError,
                               SceneError)
from relightkit.geometry import (TriangleMesh, build_bvh, merge_meshes,
                                 transform_mesh)
from relightkit.imgio import write_png
from relightkit.relight import (RelightInput, TrainingPair, relight,
                                save_bundle)
from relightkit.render import (GBuffer, SamplerConfig, ShadowMaps,
                               ambient_occlusion, gbuffer, shadow_maps)
from relightkit.rng import stream_seed_py

# Stream id for deriving per-frame sampler seeds; frame index is added
# so every frame gets an independent, order-free sample set.
FRAME_STREAM = 0x46524D45


@dataclass
class Pose:
    """Rigid transform: world_point = rotation @ object_point + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise PreconditionError("pose needs a 3x3 rotation and 3-vector")
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) \
                or np.linalg.det(R) < 0:
            raise PreconditionError(
                "pose rotation must be orthonormal with determinant +1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


@dataclass
class Actor:
    """A dynamic object: mesh in its own frame plus a pose trajectory."""

    actor_id: str
    mesh: TriangleMesh
    trajectory: dict[int, Pose]

    def __post_init__(self):
        if not self.actor_id:
            raise PreconditionError("actor id must be non-empty")
        if not self.trajectory:
            raise PreconditionError(
                f"actor '{self.actor_id}' has an empty trajectory")

    def pose_at(self, frame: int) -> Pose:
        """Pose at a frame: exact key, nearest end, or interpolated."""
        traj = self.trajectory
        if frame in traj:
            return traj[frame]
        keys = sorted(traj)
        if frame <= keys[0]:
            return traj[keys[0]]
        if frame >= keys[-1]:
            return traj[keys[-1]]
        hi = int(np.searchsorted(keys, frame))
        k0, k1 = keys[hi - 1], keys[hi]
        alpha = (frame - k0) / (k1 - k0)
        p0, p1 = traj[k0], traj[k1]
        rots = Rotation.from_matrix([p0.rotation, p1.rotation])
        rot = Slerp([0.0, 1.0], rots)(alpha).as_matrix()
        trans = (1.0 - alpha) * p0.translation + alpha * p1.translation
        return Pose(rot, trans)


@dataclass
class Scene:
    """Background + actors + per-frame cameras + source lighting."""

    background: TriangleMesh
    actors: list[Actor]
    cameras: list[CameraModel]
    env: EnvMap
    frame_count: int

    def __post_init__(self):
        if self.frame_count < 1:
            raise SceneError("scene needs at least one frame")
        if not self.cameras:
            raise SceneError("scene needs at least one camera")
        ids = [a.actor_id for a in self.actors]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in set(ids) if ids.count(i) > 1)
            raise SceneError(f"duplicate actor ids: {dup}")
        for actor in self.actors:
            bad = [k for k in actor.trajectory
                   if not 0 <= k < self.frame_count]
            if bad:
                raise SceneError(
                    f"actor '{actor.actor_id}' has trajectory keys "
                    f"{sorted(bad)} outside [0, {self.frame_count})")

    def camera_at(self, frame: int) -> CameraModel:
        """Rig camera for a frame; a short rig holds its last pose."""
        return self.cameras[min(frame, len(self.cameras) - 1)]

    def merged_mesh(self, frame: int = 0) -> TriangleMesh:
        return frame_geometry(self, frame)


# -------------------------------------------------------------------- edits

@dataclass
class RemoveActor:
    actor_id: str


@dataclass
class InsertActor:
    actor: Actor


@dataclass
class Retime:
    actor_id: str
    trajectory: dict[int, Pose]


@dataclass
class SetEnv:
    env: EnvMap


@dataclass
class RotateEnv:
    yaw: float


@dataclass
class MoveRig:
    """New rig trajectory; intrinsics carry over from the current rig."""

    poses: dict[int, Pose]


@dataclass
class EditScript:
    """Ordered edits; application order is the list order."""

    edits: list = field(default_factory=list)


def apply_edits(scene: Scene, script: EditScript) -> Scene:
    """Apply a script functionally; the input scene is untouched.

    Unknown actor ids fail with the id and the edit's position in the
    script; the result must satisfy every Scene invariant.
    """
    from relightkit.envlight import rotate_env

    actors = list(scene.actors)
    cameras = list(scene.cameras)
    env = scene.env
    frame_count = scene.frame_count
    for index, edit in enumerate(script.edits):
        if isinstance(edit, RemoveActor):
            match = [a for a in actors if a.actor_id == edit.actor_id]
            if not match:
                raise SceneError(
                    f"edit {index}: unknown actor id '{edit.actor_id}'")
            actors = [a for a in actors if a.actor_id != edit.actor_id]
        elif isinstance(edit, InsertActor):
            if any(a.actor_id == edit.actor.actor_id for a in actors):
                raise SceneError(
                    f"edit {index}: actor id '{edit.actor.actor_id}' "
                    "already present")
            actors = actors + [edit.actor]
        elif isinstance(edit, Retime):
            match = [a for a in actors if a.actor_id == edit.actor_id]
            if not match:
                raise SceneError(
                    f"edit {index}: unknown actor id '{edit.actor_id}'")
            actors = [dataclasses.replace(a, trajectory=dict(edit.trajectory))
                      if a.actor_id == edit.actor_id else a for a in actors]
        elif isinstance(edit, SetEnv):
            env = edit.env
        elif isinstance(edit, RotateEnv):
            env = rotate_env(env, edit.yaw)
        elif isinstance(edit, MoveRig):
            keys = sorted(edit.poses)
            if keys != list(range(len(keys))):
                raise SceneError(
                    f"edit {index}: rig poses must cover frames "
                    f"0..{len(keys) - 1} without gaps")
            first = cameras[0]
            cameras = [CameraModel(first.width, first.height, first.fx,
                                   first.fy, first.cx, first.cy,
                                   rotation=edit.poses[f].rotation,
                                   center=edit.poses[f].translation)
                       for f in keys]
            frame_count = len(cameras)
        else:
            raise SceneError(
                f"edit {index}: unrecognized edit {type(edit).__name__}")
    return Scene(background=scene.background, actors=actors,
                 cameras=cameras, env=env, frame_count=frame_count)


# ----------------------------------------------------------- per-frame mesh

def frame_geometry(scene: Scene, frame: int) -> TriangleMesh:
    """Merged render mesh for one frame, tags marking provenance."""
    if not 0 <= frame < scene.frame_count:
        raise PreconditionError(
            f"frame {frame} outside [0, {scene.frame_count})")
    background = scene.background.copy()
    background.tags = np.zeros(len(background.faces), dtype=np.int32)
    parts = [background]
    for i, actor in enumerate(scene.actors):
        pose = actor.pose_at(frame)
        part = transform_mesh(actor.mesh, pose.rotation, pose.translation)
        part.tags = np.full(len(part.faces), i + 1, dtype=np.int32)
        parts.append(part)
    return merge_meshes(parts)


# ----------------------------------------------------------------- simulate

@dataclass
class FrameResult:
    """One simulated frame: buffers, both shadow maps, relit image."""

    frame: int
    camera: CameraModel
    gbuf: GBuffer
    maps_src: ShadowMaps
    maps_tgt: ShadowMaps
    relit: np.ndarray


def frame_sampler(sampler: SamplerConfig, frame: int) -> SamplerConfig:
    """Per-frame sampler: seed derived from (base seed, frame) only."""
    seed = stream_seed_py(sampler.seed, FRAME_STREAM + frame) \
        & 0x7FFFFFFFFFFFFFFF
    return dataclasses.replace(sampler, seed=seed)


def simulate(scene: Scene, frames, sampler: SamplerConfig,
             env_tgt: EnvMap | None = None, out_dir=None) -> list:
    """Render, shade, and relight the requested frames.

    Per frame: merged geometry, G-buffer with ambient occlusion, shadow
    maps under the scene dome and the target dome, and the relit image.
    With env_tgt omitted the target is the source dome, so relit frames
    reproduce the shaded source exactly (reconstruction playback).

    When out_dir is given each frame is persisted as a relight bundle
    directory `frame_%04d` plus a tonemapped `frame_%04d.png` preview.
    Failures carry the frame index; frames already written stay on disk.
    A frame's result depends only on (scene, frame, sampler), never on
    which other frames are in the batch.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    target_env = scene.env if env_tgt is None else env_tgt
    results = []
    for frame in frames:
        try:
            mesh = frame_geometry(scene, frame)
            bvh = build_bvh(mesh) if len(mesh.faces) else None
            camera = scene.camera_at(frame)
            fs = frame_sampler(sampler, frame)
            gb = gbuffer(mesh, bvh, camera)
            gb = dataclasses.replace(
                gb, ao=ambient_occlusion(mesh, bvh, gb, fs))
            maps_src = shadow_maps(mesh, bvh, gb, scene.env, fs)
            if env_tgt is None:
                maps_tgt = maps_src
            else:
                maps_tgt = shadow_maps(mesh, bvh, gb, target_env, fs)
            inp = RelightInput(maps_src.shadowed, gb, maps_src, maps_tgt,
                               scene.env, target_env)
            relit = relight(inp)
        except RelightKitError as exc:
            raise SceneError(f"frame {frame}: {exc}") from exc
        result = FrameResult(frame=frame, camera=camera, gbuf=gb,
                             maps_src=maps_src, maps_tgt=maps_tgt,
                             relit=relit)
        if out_path is not None:
            kind = "identity" if env_tgt is None else "sim-sim"
            pair = TrainingPair(
                kind=kind, inp=inp, label=maps_tgt.shadowed,
                meta={"frame": frame, "seed": fs.seed, "spp": fs.spp})
            save_bundle(out_path / f"frame_{frame:04d}", pair, camera)
            write_png(out_path / f"frame_{frame:04d}.png",
                      tonemap_ldr(relit))
        results.append(result)
    return results
