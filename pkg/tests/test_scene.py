"""Scene model: poses, edits, per-frame geometry, and the simulator."""

import numpy as np
import pytest

from relightkit.camera import look_at
from relightkit.envlight import EnvMap, decode_sky, env_lookup, rotate_env
from relightkit.envlight.skymodel import SkyParams
from relightkit.errors import PreconditionError, SceneError
from relightkit.geometry import box_mesh, plane_mesh
from relightkit.render import SamplerConfig
from relightkit.scene import (Actor, EditScript, FrameResult, InsertActor,
                              MoveRig, Pose, RemoveActor, Retime, RotateEnv,
                              Scene, SetEnv, apply_edits, frame_geometry,
                              simulate)


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _line_traj(points):
    return {f: Pose(np.eye(3), np.asarray(p, dtype=float))
            for f, p in points.items()}


def _basic_scene(n_frames=3, actors=None):
    cams = [look_at([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], width=8, height=8,
                    fx=6.0, fy=6.0)] * n_frames
    return Scene(background=plane_mesh(size=10.0), actors=actors or [],
                 cameras=cams, env=EnvMap.constant(4, 1.0),
                 frame_count=n_frames)


# --------------------------------------------------------------------- pose

def test_pose_validation():
    with pytest.raises(PreconditionError, match="orthonormal"):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(PreconditionError, match="3x3"):
        Pose(np.eye(2), np.zeros(3))


def test_pose_at_exact_and_clamped():
    actor = Actor("a", box_mesh(), _line_traj({2: (1, 0, 0), 5: (4, 0, 0)}))
    np.testing.assert_array_equal(actor.pose_at(2).translation, [1, 0, 0])
    np.testing.assert_array_equal(actor.pose_at(0).translation, [1, 0, 0])
    np.testing.assert_array_equal(actor.pose_at(9).translation, [4, 0, 0])


def test_pose_at_linear_midpoint():
    actor = Actor("a", box_mesh(), _line_traj({0: (0, 0, 0), 2: (2, 0, 0)}))
    np.testing.assert_allclose(actor.pose_at(1).translation, [1, 0, 0],
                               atol=1e-12)


def test_pose_at_slerp_midpoint():
    traj = {0: Pose(np.eye(3), np.zeros(3)),
            2: Pose(_rot_z(np.pi / 2), np.zeros(3))}
    actor = Actor("a", box_mesh(), traj)
    mid = actor.pose_at(1).rotation
    np.testing.assert_allclose(mid, _rot_z(np.pi / 4), atol=1e-12)


def test_actor_validation():
    with pytest.raises(PreconditionError, match="empty trajectory"):
        Actor("a", box_mesh(), {})
    with pytest.raises(PreconditionError, match="id"):
        Actor("", box_mesh(), _line_traj({0: (0, 0, 0)}))


# -------------------------------------------------------------------- scene

def test_scene_invariants():
    a = Actor("x", box_mesh(), _line_traj({0: (0, 0, 0)}))
    b = Actor("x", box_mesh(), _line_traj({0: (1, 0, 0)}))
    with pytest.raises(SceneError, match="duplicate"):
        _basic_scene(actors=[a, b])
    far = Actor("y", box_mesh(), _line_traj({7: (0, 0, 0)}))
    with pytest.raises(SceneError, match="outside"):
        _basic_scene(n_frames=3, actors=[far])
    with pytest.raises(SceneError, match="camera"):
        Scene(background=plane_mesh(), actors=[], cameras=[],
              env=EnvMap.constant(4, 1.0), frame_count=1)


# -------------------------------------------------------------------- edits

def test_apply_edits_empty_script():
    scene = _basic_scene(actors=[
        Actor("a", box_mesh(), _line_traj({0: (0, 0, 0)}))])
    out = apply_edits(scene, EditScript())
    assert [a.actor_id for a in out.actors] == ["a"]
    np.testing.assert_array_equal(out.env.data, scene.env.data)
    assert out.frame_count == scene.frame_count


def test_apply_edits_insert_then_remove_is_identity():
    scene = _basic_scene(actors=[
        Actor("keep", box_mesh(), _line_traj({0: (0, 0, 0)}))])
    extra = Actor("tmp", box_mesh(), _line_traj({1: (1, 1, 0)}))
    out = apply_edits(scene, EditScript([InsertActor(extra),
                                        RemoveActor("tmp")]))
    assert {a.actor_id for a in out.actors} == {"keep"}
    assert {a.actor_id for a in scene.actors} == {"keep"}  # untouched


def test_apply_edits_retime_shift_composes():
    # Shifting all pose keys by +1 frame makes frame-t geometry equal
    # the original frame-(t-1) placement.
    traj = _line_traj({0: (0, 0, 1), 1: (1, 0, 1), 2: (2, 0, 1)})
    scene = _basic_scene(actors=[Actor("a", box_mesh(), traj)])
    shifted = {k + 1: p for k, p in traj.items() if k + 1 < 3}
    out = apply_edits(scene, EditScript([Retime("a", shifted)]))
    for t in (1, 2):
        got = frame_geometry(out, t)
        ref = frame_geometry(scene, t - 1)
        np.testing.assert_allclose(
            got.vertices[len(scene.background.vertices):],
            ref.vertices[len(scene.background.vertices):], atol=1e-12)


def test_apply_edits_unknown_id_names_id_and_index():
    scene = _basic_scene()
    with pytest.raises(SceneError, match=r"edit 0.*'ghost'"):
        apply_edits(scene, EditScript([RemoveActor("ghost")]))
    with pytest.raises(SceneError, match=r"edit 1.*'ghost'"):
        apply_edits(scene, EditScript([
            RotateEnv(0.1), Retime("ghost", _line_traj({0: (0, 0, 0)}))]))


def test_apply_edits_duplicate_insert_rejected():
    scene = _basic_scene(actors=[
        Actor("a", box_mesh(), _line_traj({0: (0, 0, 0)}))])
    dup = Actor("a", box_mesh(), _line_traj({0: (1, 0, 0)}))
    with pytest.raises(SceneError, match="already present"):
        apply_edits(scene, EditScript([InsertActor(dup)]))


def test_apply_edits_lighting():
    scene = _basic_scene()
    new_env = EnvMap.constant(4, 2.0)
    out = apply_edits(scene, EditScript([SetEnv(new_env)]))
    np.testing.assert_array_equal(out.env.data, new_env.data)
    rng = np.random.default_rng(0)
    scene2 = Scene(background=scene.background, actors=[],
                   cameras=scene.cameras,
                   env=EnvMap(rng.uniform(0.1, 2, (4, 8, 3))),
                   frame_count=scene.frame_count)
    out2 = apply_edits(scene2, EditScript([RotateEnv(np.pi)]))
    np.testing.assert_array_equal(out2.env.data,
                                  rotate_env(scene2.env, np.pi).data)


def test_apply_edits_move_rig():
    scene = _basic_scene(n_frames=2)
    poses = {0: Pose(np.eye(3), [1.0, 2.0, 3.0]),
             1: Pose(np.eye(3), [1.0, 2.0, 4.0]),
             2: Pose(np.eye(3), [1.0, 2.0, 5.0])}
    out = apply_edits(scene, EditScript([MoveRig(poses)]))
    assert out.frame_count == 3
    assert len(out.cameras) == 3
    np.testing.assert_array_equal(out.cameras[2].center, [1, 2, 5])
    assert out.cameras[0].fx == scene.cameras[0].fx
    with pytest.raises(SceneError, match="without gaps"):
        apply_edits(scene, EditScript([MoveRig({1: Pose.identity()})]))


def test_apply_edits_is_pure_and_repeatable():
    scene = _basic_scene(actors=[
        Actor("a", box_mesh(), _line_traj({0: (0, 0, 0)}))])
    script = EditScript([RemoveActor("a"), RotateEnv(0.5)])
    out1 = apply_edits(scene, script)
    out2 = apply_edits(scene, script)
    assert [a.actor_id for a in scene.actors] == ["a"]
    assert not out1.actors and not out2.actors
    np.testing.assert_array_equal(out1.env.data, out2.env.data)


# ----------------------------------------------------------- frame geometry

def test_frame_geometry_background_only():
    scene = _basic_scene()
    mesh = frame_geometry(scene, 0)
    np.testing.assert_array_equal(mesh.vertices, scene.background.vertices)
    assert np.all(mesh.tags == 0)


def test_frame_geometry_identity_pose_keeps_object_frame():
    actor = Actor("a", box_mesh(), {0: Pose.identity()})
    scene = _basic_scene(actors=[actor])
    mesh = frame_geometry(scene, 0)
    n_bg = len(scene.background.vertices)
    np.testing.assert_array_equal(mesh.vertices[n_bg:], actor.mesh.vertices)


def test_frame_geometry_counts_and_tags():
    actors = [Actor("a", box_mesh(), {0: Pose.identity()}),
              Actor("b", box_mesh(size=(2, 1, 1)),
                    _line_traj({0: (3, 0, 0)}))]
    bg = plane_mesh(size=10.0)
    bg.tags = np.full(len(bg.faces), 9, dtype=np.int32)  # must be reset
    scene = Scene(background=bg, actors=actors,
                  cameras=_basic_scene().cameras,
                  env=EnvMap.constant(4, 1.0), frame_count=3)
    mesh = frame_geometry(scene, 0)
    n_bg, n_a = len(bg.faces), len(actors[0].mesh.faces)
    n_b = len(actors[1].mesh.faces)
    assert len(mesh.faces) == n_bg + n_a + n_b
    assert set(np.unique(mesh.tags)) == {0, 1, 2}
    assert np.all(mesh.tags[:n_bg] == 0)
    assert np.all(mesh.tags[n_bg:n_bg + n_a] == 1)
    assert np.all(mesh.tags[n_bg + n_a:] == 2)


def test_frame_geometry_range_check():
    with pytest.raises(PreconditionError, match="outside"):
        frame_geometry(_basic_scene(n_frames=2), 2)


# ----------------------------------------------------------------- simulate

def test_simulate_identity_lighting_reproduces_source():
    scene = _basic_scene(n_frames=1, actors=[
        Actor("a", box_mesh(center=(0.0, 0.0, 0.5)),
              {0: Pose.identity()})])
    (res,) = simulate(scene, [0], SamplerConfig(spp=16))
    np.testing.assert_array_equal(res.relit, res.maps_src.shadowed)
    assert res.maps_tgt is res.maps_src


def test_simulate_frame_order_independent():
    actor = Actor("a", box_mesh(center=(0.0, 0.0, 0.5)),
                  _line_traj({0: (-0.5, 0, 0), 2: (0.5, 0, 0)}))
    scene = _basic_scene(n_frames=3, actors=[actor])
    alone = simulate(scene, [1], SamplerConfig(spp=16))
    batch = simulate(scene, [0, 1, 2], SamplerConfig(spp=16))
    np.testing.assert_array_equal(alone[0].relit, batch[1].relit)
    np.testing.assert_array_equal(alone[0].maps_src.ratio,
                                  batch[1].maps_src.ratio)


def test_simulate_frames_use_distinct_sample_sets():
    # A static scene under a nonuniform dome: identical per-frame seeds
    # would reproduce the same Monte-Carlo noise; distinct ones differ.
    base = _basic_scene(n_frames=2)
    u = np.arange(8) / 8.0
    grad = 0.2 + 0.8 * np.abs(np.sin(2 * np.pi * u))
    env = EnvMap(np.tile(grad[None, :, None], (4, 1, 3)))
    scene = Scene(background=base.background, actors=[],
                  cameras=base.cameras, env=env, frame_count=2)
    a, b = simulate(scene, [0, 1], SamplerConfig(spp=16))
    assert not np.array_equal(a.maps_src.shadowed, b.maps_src.shadowed)


def test_simulate_writes_bundles_and_previews(tmp_path):
    scene = _basic_scene(n_frames=3)
    simulate(scene, [0, 1, 2], SamplerConfig(spp=4),
             env_tgt=EnvMap.constant(4, 2.0), out_dir=tmp_path)
    for f in range(3):
        assert (tmp_path / f"frame_{f:04d}").is_dir()
        assert (tmp_path / f"frame_{f:04d}" / "label.fb").exists()
        assert (tmp_path / f"frame_{f:04d}.png").exists()


def test_simulate_failure_carries_frame_and_keeps_earlier(tmp_path):
    scene = _basic_scene(n_frames=2)
    with pytest.raises(SceneError, match="frame 7"):
        simulate(scene, [0, 7], SamplerConfig(spp=4), out_dir=tmp_path)
    assert (tmp_path / "frame_0000" / "source.fb").exists()


def _sun_scene(actor_traj, n_frames):
    sun = np.array([np.cos(np.pi / 4), 0.0, np.sin(np.pi / 4)])
    env = decode_sky(SkyParams(z_sky=np.zeros(64), f_int=20000.0,
                               f_dir=sun), height=64)
    cam = look_at([0.0, 0.0, 6.0], [0.0, 0.0, 0.0], width=24, height=24,
                  fx=36.0, fy=36.0, up=(1.0, 0.0, 0.0))
    actor = Actor("box", box_mesh(center=(0.0, 0.0, 0.5)), actor_traj)
    return Scene(background=plane_mesh(size=30.0), actors=[actor],
                 cameras=[cam] * n_frames, env=env, frame_count=n_frames)


def _dark_centroid(result):
    # Mean world position of shadowed ground pixels (provenance tag 0).
    s = result.maps_src.ratio.mean(axis=-1)
    dark = (s < 0.5) & (result.gbuf.tag == 0)
    assert dark.sum() > 4
    return result.gbuf.position[dark].mean(axis=0)


def test_simulate_shadow_tracks_moving_actor():
    # Sun at 45 deg from +x: a unit box centered at (cx, 0) darkens the
    # ground rectangle [cx-1.5, cx+0.5] x [-0.5, 0.5].  The overhead
    # camera cannot see the part under the box footprint, so the visible
    # dark region is [cx-1.5, cx-0.5], centroid (cx-1, 0).
    traj = _line_traj({0: (-0.4, 0.0, 0.0), 2: (0.4, 0.0, 0.0)})
    scene = _sun_scene(traj, 3)
    results = simulate(scene, [0, 1, 2], SamplerConfig(spp=8192))
    texel = 6.0 / 36.0  # ground-plane footprint of one pixel
    for res, cx in zip(results, (-0.4, 0.0, 0.4)):
        centroid = _dark_centroid(res)
        assert abs(centroid[0] - (cx - 1.0)) < 2 * texel
        assert abs(centroid[1]) < 2 * texel


def test_simulate_env_rotation_mirrors_shadow():
    traj = _line_traj({0: (0.0, 0.0, 0.0)})
    scene = _sun_scene(traj, 1)
    flipped = rotate_env(scene.env, np.pi)
    (res,) = simulate(scene, [0], SamplerConfig(spp=8192), env_tgt=flipped)
    s_src = res.maps_src.ratio.mean(axis=-1)
    s_tgt = res.maps_tgt.ratio.mean(axis=-1)
    ground = res.gbuf.tag == 0
    texel = 6.0 / 36.0
    src_c = res.gbuf.position[(s_src < 0.5) & ground].mean(axis=0)
    tgt_c = res.gbuf.position[(s_tgt < 0.5) & ground].mean(axis=0)
    # Mirror across the box footprint center (x = 0).
    assert abs(tgt_c[0] - (-src_c[0])) < 2 * texel
    assert abs(tgt_c[1] - src_c[1]) < 2 * texel


def test_frame_result_fields():
    scene = _basic_scene(n_frames=1)
    (res,) = simulate(scene, [0], SamplerConfig(spp=4))
    assert isinstance(res, FrameResult)
    assert res.frame == 0
    assert res.relit.shape == (8, 8, 3)
    assert res.gbuf.ao.shape == (8, 8)
