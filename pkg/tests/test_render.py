"""G-buffers, ambient occlusion, shading, and shadow-ratio maps."""

import numpy as np
import pytest

from relightkit.camera import look_at
from relightkit.envlight import EnvMap, decode_sky, env_lookup
from relightkit.envlight.skymodel import SkyParams
from relightkit.errors import PreconditionError
from relightkit.geometry import (build_bvh, box_mesh, merge_meshes,
                                 plane_mesh, transform_mesh)
from relightkit.panorama import render_depth
from relightkit.render import (GBuffer, SamplerConfig, ShadowMaps,
                               ambient_occlusion, gbuffer, shade, shadow_maps)

from conftest import random_soup


def _plane_setup(width=16, height=16, size=50.0, z_cam=5.0, fx=12.0):
    mesh = plane_mesh(size=size)
    bvh = build_bvh(mesh)
    cam = look_at([0.0, 0.0, z_cam], [0.0, 0.0, 0.0], width=width,
                  height=height, fx=fx, fy=fx)
    return mesh, bvh, cam


# ------------------------------------------------------------------- gbuffer

def test_gbuffer_plane_from_above():
    mesh, bvh, cam = _plane_setup()
    gb = gbuffer(mesh, bvh, cam)
    assert not gb.is_sky.any()
    assert np.allclose(gb.normal, [0.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(gb.position[..., 2], 0.0, atol=1e-12)
    np.testing.assert_allclose(gb.albedo, 0.5, atol=1e-12)
    assert np.all(gb.tag == 0)


def test_gbuffer_empty_scene_all_sky():
    from relightkit.geometry import TriangleMesh
    empty = TriangleMesh(vertices=np.zeros((0, 3)),
                         faces=np.zeros((0, 3), dtype=np.int64),
                         normals=np.zeros((0, 3)), albedo=np.zeros((0, 3)))
    cam = look_at([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], width=6, height=4,
                  fx=4.0, fy=4.0)
    gb = gbuffer(empty, None, cam)
    assert gb.is_sky.all()
    assert np.all(gb.ao == 1.0)
    assert np.all(gb.normal == 0.0)
    assert np.all(gb.tag == -1)


def test_gbuffer_depth_matches_render_depth_bitwise():
    mesh, bvh, cam = _plane_setup(width=24, height=18)
    gb = gbuffer(mesh, bvh, cam)
    dm = render_depth(mesh, bvh, cam)
    np.testing.assert_array_equal(gb.depth, dm.depth)


def test_gbuffer_backface_normals_face_camera():
    # Looking at the underside of a plane whose stored normal is +z.
    mesh = plane_mesh(size=10.0)
    bvh = build_bvh(mesh)
    cam = look_at([0.0, 0.0, -5.0], [0.0, 0.0, 0.0], width=4, height=4,
                  fx=3.0, fy=3.0)
    gb = gbuffer(mesh, bvh, cam)
    assert np.allclose(gb.normal, [0.0, 0.0, -1.0], atol=1e-12)


def test_gbuffer_channels_roundtrip():
    mesh, bvh, cam = _plane_setup(width=12, height=9, size=4.0)
    gb = gbuffer(mesh, bvh, cam)  # plane smaller than frame -> sky border
    assert gb.is_sky.any() and (~gb.is_sky).any()
    ch = gb.channels()
    assert ch.shape == (9, 12, 8)
    assert np.isfinite(ch).all()  # sky depth mapped to the sentinel
    back = GBuffer.from_channels(ch, cam)
    np.testing.assert_array_equal(back.depth, gb.depth)
    np.testing.assert_array_equal(back.position, gb.position)
    np.testing.assert_array_equal(back.normal, gb.normal)
    np.testing.assert_array_equal(back.ao, gb.ao)
    np.testing.assert_array_equal(back.ray_dir, gb.ray_dir)


def test_gbuffer_validation():
    mesh, bvh, cam = _plane_setup(width=4, height=4)
    gb = gbuffer(mesh, bvh, cam)
    with pytest.raises(PreconditionError, match="ao"):
        GBuffer(position=gb.position, depth=gb.depth, normal=gb.normal,
                ao=gb.ao + 2.0, albedo=gb.albedo, ray_dir=gb.ray_dir,
                tag=gb.tag)
    with pytest.raises(PreconditionError, match="unit"):
        GBuffer(position=gb.position, depth=gb.depth,
                normal=gb.normal * 2.0, ao=gb.ao, albedo=gb.albedo,
                ray_dir=gb.ray_dir, tag=gb.tag)
    with pytest.raises(PreconditionError, match="shape"):
        GBuffer(position=gb.position[:2], depth=gb.depth, normal=gb.normal,
                ao=gb.ao, albedo=gb.albedo, ray_dir=gb.ray_dir, tag=gb.tag)


# ------------------------------------------------------------ SamplerConfig

def test_sampler_config_auto_strata():
    assert SamplerConfig(spp=256).grid() == (16, 16)
    assert SamplerConfig(spp=100).grid() == (10, 10)
    assert SamplerConfig(spp=7).grid() == (1, 1)
    assert SamplerConfig(spp=512, strata=(1, 1)).grid() == (1, 1)
    assert SamplerConfig(spp=8, strata=(2, 2)).grid() == (2, 2)


def test_sampler_config_validation():
    with pytest.raises(PreconditionError, match="spp"):
        SamplerConfig(spp=0)
    with pytest.raises(PreconditionError, match="multiple"):
        SamplerConfig(spp=8, strata=(3, 2))
    with pytest.raises(PreconditionError, match=">= 1"):
        SamplerConfig(spp=8, strata=(0, 2))


# ---------------------------------------------------------- ambient occlusion

def test_ao_isolated_plane_fully_open():
    mesh, bvh, cam = _plane_setup()
    gb = gbuffer(mesh, bvh, cam)
    ao = ambient_occlusion(mesh, bvh, gb, SamplerConfig(spp=256))
    np.testing.assert_array_equal(ao, 1.0)


def test_ao_wall_junction_half_blocked():
    # Ground plane meeting a perpendicular wall: a point at the base
    # sees half the cosine-weighted hemisphere. [DERIVED: analytic 1/2]
    ground = plane_mesh(size=40.0)
    rot_y = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    wall = transform_mesh(plane_mesh(size=40.0), rot_y, np.zeros(3))
    mesh = merge_meshes([ground, wall])
    bvh = build_bvh(mesh)
    cam = look_at([1.0, 0.0, 3.0], [0.02, 0.0, 0.0], width=3, height=3,
                  fx=80.0, fy=80.0)
    gb = gbuffer(mesh, bvh, cam)
    assert gb.position[1, 1, 0] == pytest.approx(0.02, abs=1e-6)
    ao = ambient_occlusion(mesh, bvh, gb, SamplerConfig(spp=256))
    assert ao[1, 1] == pytest.approx(0.5, abs=0.05)


def test_ao_closed_box_interior():
    # Every hemisphere ray from the box floor hits a wall within one
    # scene diameter. [DERIVED: enclosure]
    box = box_mesh(size=(2.0, 2.0, 2.0))
    bvh = build_bvh(box)
    cam = look_at([0.0, 0.0, 0.5], [0.0, 0.0, -1.0], width=3, height=3,
                  fx=3.0, fy=3.0, up=(0.0, 1.0, 0.0))
    gb = gbuffer(box, bvh, cam)
    ao = ambient_occlusion(box, bvh, gb, SamplerConfig(spp=256))
    assert ao.max() < 0.05


def test_ao_deterministic_and_seed_sensitive():
    ground = plane_mesh(size=10.0)
    rot_y = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    wall = transform_mesh(plane_mesh(size=10.0), rot_y, np.zeros(3))
    mesh = merge_meshes([ground, wall])
    bvh = build_bvh(mesh)
    cam = look_at([1.0, 0.5, 2.0], [0.1, 0.0, 0.0], width=6, height=6,
                  fx=10.0, fy=10.0)
    gb = gbuffer(mesh, bvh, cam)
    a = ambient_occlusion(mesh, bvh, gb, SamplerConfig(spp=64, seed=0))
    b = ambient_occlusion(mesh, bvh, gb, SamplerConfig(spp=64, seed=0))
    c = ambient_occlusion(mesh, bvh, gb, SamplerConfig(spp=64, seed=1))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() <= 1.0


# --------------------------------------------------------------------- shade

def test_furnace_uniform_env():
    # k_d = 0.5 under L0 = 1: every sample contributes exactly 1, so the
    # estimator collapses to the albedo up to interpolation roundoff.
    mesh, bvh, cam = _plane_setup(width=16, height=16)
    gb = gbuffer(mesh, bvh, cam)
    img = shade(mesh, bvh, gb, EnvMap.constant(16, 1.0), True,
                SamplerConfig(spp=256))
    np.testing.assert_allclose(img, 0.5, atol=1e-12)


def test_shade_shadow_flag_bitwise_equal_when_unoccluded():
    mesh, bvh, cam = _plane_setup(width=8, height=8)
    gb = gbuffer(mesh, bvh, cam)
    env = EnvMap(np.linspace(0.2, 2.0, 8 * 16 * 3).reshape(8, 16, 3))
    with_v = shade(mesh, bvh, gb, env, True, SamplerConfig(spp=64))
    without = shade(mesh, bvh, gb, env, False, SamplerConfig(spp=64))
    np.testing.assert_array_equal(with_v, without)


def test_shade_sky_pixels_sample_env_along_ray():
    mesh, bvh, cam = _plane_setup(width=12, height=9, size=4.0)
    gb = gbuffer(mesh, bvh, cam)
    sky = gb.is_sky
    assert sky.any()
    env = EnvMap(np.linspace(0.1, 3.0, 6 * 12 * 3).reshape(6, 12, 3))
    img = shade(mesh, bvh, gb, env, True, SamplerConfig(spp=16))
    expected = env_lookup(env, gb.ray_dir[sky])
    np.testing.assert_array_equal(img[sky], expected)


def test_shade_energy_bound():
    mesh, bvh, cam = _plane_setup(width=8, height=8)
    gb = gbuffer(mesh, bvh, cam)
    rng = np.random.default_rng(5)
    env = EnvMap(rng.uniform(0.0, 4.0, size=(8, 16, 3)))
    img = shade(mesh, bvh, gb, env, True, SamplerConfig(spp=128, seed=2))
    bound = 0.5 * env.data.reshape(-1, 3).max(axis=0)
    assert np.all(img <= bound + 1e-9)


def test_shade_variance_halves_with_spp():
    # Pure Monte-Carlo (1x1 strata): estimator variance ~ 1/spp. Slope
    # of log-variance vs log-spp over {64,128,256,512} must be near -1.
    mesh, bvh, _ = _plane_setup()
    height = 32
    u = np.arange(2 * height) / (2 * height)
    grad = 0.2 + 0.8 * np.abs(np.sin(2 * np.pi * u))
    env = EnvMap(np.tile(grad[None, :, None], (height, 1, 3)))
    cam = look_at([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], width=1, height=1,
                  fx=1.0, fy=1.0)
    gb = gbuffer(mesh, bvh, cam)
    spps = (64, 128, 256, 512)
    variances = []
    for spp in spps:
        vals = [shade(mesh, bvh, gb, env, True,
                      SamplerConfig(spp=spp, seed=s, strata=(1, 1)))[0, 0, 0]
                for s in range(200)]
        variances.append(np.var(vals))
    slope = np.polyfit(np.log(spps), np.log(variances), 1)[0]
    assert -1.35 < slope < -0.65


def test_shade_deterministic():
    mesh, bvh, cam = _plane_setup(width=6, height=6)
    gb = gbuffer(mesh, bvh, cam)
    env = EnvMap(np.linspace(0.5, 1.5, 4 * 8 * 3).reshape(4, 8, 3))
    a = shade(mesh, bvh, gb, env, True, SamplerConfig(spp=32, seed=9))
    b = shade(mesh, bvh, gb, env, True, SamplerConfig(spp=32, seed=9))
    np.testing.assert_array_equal(a, b)


# --------------------------------------------------------------- shadow maps

def test_shadow_maps_occluder_free_ratio_is_one():
    mesh, bvh, cam = _plane_setup(width=10, height=10)
    gb = gbuffer(mesh, bvh, cam)
    env = EnvMap.constant(8, 1.0)
    sm = shadow_maps(mesh, bvh, gb, env, SamplerConfig(spp=64))
    np.testing.assert_array_equal(sm.ratio, 1.0)


def test_shadow_maps_enclosed_ratio_near_zero():
    box = box_mesh(size=(2.0, 2.0, 2.0))
    bvh = build_bvh(box)
    cam = look_at([0.0, 0.0, 0.5], [0.0, 0.0, -1.0], width=3, height=3,
                  fx=3.0, fy=3.0, up=(0.0, 1.0, 0.0))
    gb = gbuffer(box, bvh, cam)
    sm = shadow_maps(box, bvh, gb, EnvMap.constant(8, 1.0),
                     SamplerConfig(spp=64))
    assert sm.ratio.max() < 1e-6


def test_shadow_maps_matches_shade_bitwise():
    mesh = merge_meshes([plane_mesh(size=20.0),
                         box_mesh(size=(1.0, 1.0, 1.0),
                                  center=(0.0, 0.0, 0.5))])
    bvh = build_bvh(mesh)
    cam = look_at([3.0, 2.0, 4.0], [0.0, 0.0, 0.0], width=12, height=12,
                  fx=10.0, fy=10.0)
    gb = gbuffer(mesh, bvh, cam)
    env = EnvMap(np.linspace(0.2, 2.0, 8 * 16 * 3).reshape(8, 16, 3))
    sm = shadow_maps(mesh, bvh, gb, env, SamplerConfig(spp=64, seed=4))
    np.testing.assert_array_equal(
        sm.shadowed, shade(mesh, bvh, gb, env, True,
                           SamplerConfig(spp=64, seed=4)))
    np.testing.assert_array_equal(
        sm.unshadowed, shade(mesh, bvh, gb, env, False,
                             SamplerConfig(spp=64, seed=4)))


def test_shadow_ratio_bounds_random_scenes():
    # Shared samples pin S into [0, 1] bitwise on arbitrary scenes.
    rng = np.random.default_rng(17)
    for draw in range(6):
        soup = random_soup(rng, n_tris=40, scale=1.5)
        mesh = merge_meshes([plane_mesh(size=12.0, center=(0, 0, -1.5)),
                             soup])
        bvh = build_bvh(mesh)
        cam = look_at(rng.uniform(2.5, 4.0, 3), [0.0, 0.0, -1.0],
                      width=8, height=8, fx=6.0, fy=6.0)
        gb = gbuffer(mesh, bvh, cam)
        env = EnvMap(rng.uniform(0.0, 5.0, size=(6, 12, 3)))
        sm = shadow_maps(mesh, bvh, gb, env,
                         SamplerConfig(spp=32, seed=draw))
        assert sm.ratio.min() >= 0.0
        assert sm.ratio.max() <= 1.0
        assert np.all(sm.ratio[gb.is_sky] == 1.0)


def test_shadow_maps_sun_casts_dark_region():
    # Box on a plane under a concentrated sun: ground behind the box
    # (opposite the sun azimuth) is dark, open ground is lit.
    sun = np.array([np.cos(np.pi / 4), 0.0, np.sin(np.pi / 4)])
    env = decode_sky(SkyParams(z_sky=np.zeros(64), f_int=20000.0,
                               f_dir=sun), height=64)
    mesh = merge_meshes([plane_mesh(size=30.0),
                         box_mesh(size=(1.0, 1.0, 1.0),
                                  center=(0.0, 0.0, 0.5))])
    bvh = build_bvh(mesh)
    cam = look_at([0.0, 0.0, 6.0], [-0.5, 0.0, 0.0], width=32, height=32,
                  fx=24.0, fy=24.0, up=(1.0, 0.0, 0.0))
    gb = gbuffer(mesh, bvh, cam)
    sm = shadow_maps(mesh, bvh, gb, env, SamplerConfig(spp=16384, seed=0))
    s_mean = sm.ratio.mean(axis=-1)

    def s_at(x, y):
        d2 = ((gb.position[..., 0] - x) ** 2 +
              (gb.position[..., 1] - y) ** 2 +
              np.where(gb.is_sky, np.inf, 0.0))
        iy, ix = np.unravel_index(np.argmin(d2), d2.shape)
        return s_mean[iy, ix]

    assert s_at(-1.0, 0.0) < 0.2    # inside the projected shadow
    assert s_at(1.5, 0.0) > 0.9     # sun side, lit
    assert s_at(-2.5, 0.0) > 0.9    # beyond the shadow tip, lit


def test_shadow_maps_validation():
    with pytest.raises(PreconditionError, match="ratio"):
        ShadowMaps(shadowed=np.ones((2, 2, 3)),
                   unshadowed=np.ones((2, 2, 3)),
                   ratio=np.full((2, 2, 3), 1.5))
