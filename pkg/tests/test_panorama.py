"""Depth rendering, panorama stitching, and diffusion hole-filling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dataclasses

from relightkit.camera import look_at
from relightkit.envlight import EnvMap, decode_sky, env_lookup, tonemap_ldr
from relightkit.envlight.envmap import pixel_to_dir
from relightkit.envlight.skymodel import SkyParams
from relightkit.errors import PreconditionError
from relightkit.geometry import TriangleMesh, build_bvh, marching_cubes, plane_mesh
from relightkit.panorama import DepthMap, Panorama, fill_holes, render_depth, stitch

from conftest import sphere_sdf_grid


# -------------------------------------------------------------- render_depth

def test_render_depth_plane_center_pixel():
    mesh = plane_mesh(size=40.0)
    bvh = build_bvh(mesh)
    cam = look_at([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], width=33, height=33,
                  fx=16.0, fy=16.0)
    dm = render_depth(mesh, bvh, cam)
    # The center ray is the optical axis, so its distance is perpendicular.
    assert dm.depth[16, 16] == pytest.approx(5.0, abs=1e-12)
    assert not dm.is_sky.any()
    # Off-axis rays are strictly longer than the perpendicular distance.
    assert dm.depth.min() == dm.depth[16, 16]


def test_render_depth_empty_mesh_all_sky():
    cam = look_at([0.0, 0.0, 5.0], [0.0, 0.0, 0.0], width=8, height=6,
                  fx=4.0, fy=4.0)
    empty = TriangleMesh(vertices=np.zeros((0, 3)),
                         faces=np.zeros((0, 3), dtype=np.int64),
                         normals=np.zeros((0, 3)), albedo=np.zeros((0, 3)))
    dm = render_depth(empty, None, cam)
    assert dm.is_sky.all()


def test_render_depth_sphere_matches_analytic():
    # Mesh a unit sphere at 64^3 and compare hit distances against the
    # analytic ray-sphere solution. Marching-cubes vertices sit within
    # one chord sagitta of the true surface (edge ~ h*sqrt(2), sagitta
    # ~ (h*sqrt(2))^2 / (8R) = h^2/(4R)); along a ray that surface error
    # divides by the incidence cosine, so compare away from the
    # silhouette and allow twice the chord error.
    res = 64
    grid = sphere_sdf_grid(resolution=res, half_extent=2.0, radius=1.0)
    mesh = marching_cubes(grid)
    bvh = build_bvh(mesh)
    # Slightly off-axis: an axis-aligned camera fires pixel rays exactly
    # along the grid symmetry planes, dead onto shared mesh edges.
    cam = look_at([0.0131, -0.0072, 4.0], [0.0, 0.0, 0.0], width=65,
                  height=65, fx=96.0, fy=96.0)
    dm = render_depth(mesh, bvh, cam)

    dirs = cam.pixel_rays().reshape(-1, 3)
    oc = cam.center
    b = dirs @ oc
    disc = b * b - (oc @ oc - 1.0)
    hits = disc > 0.0
    t_true = np.full(len(dirs), np.inf)
    t_true[hits] = -b[hits] - np.sqrt(disc[hits])
    cos_inc = np.zeros(len(dirs))
    p = oc + np.where(hits, t_true, 0.0)[:, None] * dirs
    cos_inc[hits] = np.abs(np.einsum("nd,nd->n", p[hits], dirs[hits]))

    h = 4.0 / res
    sagitta = h * h / 4.0
    central = hits & (cos_inc > 0.5)
    assert central.sum() > 500
    err = np.abs(dm.depth.reshape(-1)[central] - t_true[central])
    assert np.all(err <= 2.0 * sagitta / cos_inc[central])


# -------------------------------------------------------------------- stitch

def _distinct_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(h, w, 3))


def test_stitch_single_camera_forward_texel():
    # A 3x3 image with fx=1 spreads pixels ~45 degrees apart, so at
    # pano H=64 each maps to its own texel; the texel containing the
    # camera forward axis must carry the center pixel untouched.
    cam = look_at([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], width=3, height=3,
                  fx=1.0, fy=1.0)
    image = _distinct_image(3, 3)
    depth = np.full((3, 3), np.inf)
    pano = stitch([image], [depth], [cam], pano_height=64)
    ix, iy = 64, 32  # dir (1,0,0) -> pixel (W/2, H/2) -> texel (64, 32)
    assert pano.mask[iy, ix]
    assert pano.count[iy, ix] == 1
    np.testing.assert_array_equal(pano.image[iy, ix], image[1, 1])


def test_stitch_two_colocated_cameras_idempotent():
    cam = look_at([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], width=9, height=9,
                  fx=4.0, fy=4.0)
    image = _distinct_image(9, 9)
    depth = np.full((9, 9), np.inf)
    single = stitch([image], [depth], [cam], pano_height=64)
    double = stitch([image, image], [depth, depth], [cam, cam],
                    pano_height=64)
    np.testing.assert_array_equal(double.image, single.image)
    np.testing.assert_array_equal(double.count, 2 * single.count)
    np.testing.assert_array_equal(double.mask, single.mask)


def _dome_cameras_and_images(env_ldr: EnvMap, dome_radius=100.0):
    """Two offset cameras photographing a far dome textured by env_ldr."""
    cams = [
        look_at([0.05, 0.0, 0.0], [10.0, 0.0, 2.0], width=96, height=96,
                fx=48.0, fy=48.0),
        look_at([-0.05, 0.0, 0.0], [-10.0, 5.0, 2.0], width=96, height=96,
                fx=48.0, fy=48.0),
    ]
    images, depths = [], []
    for cam in cams:
        dirs = cam.pixel_rays()
        images.append(env_lookup(env_ldr, dirs))
        depths.append(np.full(dirs.shape[:2], dome_radius))
    return cams, images, depths


def _smooth_env_ldr(height=96) -> EnvMap:
    params = SkyParams(z_sky=np.zeros(64), f_int=0.0, f_dir=(0.0, 0.0, 1.0))
    hdr = decode_sky(params, height=height)
    return EnvMap(tonemap_ldr(hdr.data))


def test_stitch_dome_matches_envmap():
    # [DERIVED] resampling oracle: images of a far textured dome stitch
    # back into the dome's own texture; masked PSNR > 30 dB. The dome
    # texture is finer than the panorama so the comparison exercises
    # real resampling instead of collapsing to exact texel identity.
    env = _smooth_env_ldr(128)
    cams, images, depths = _dome_cameras_and_images(env)
    pano = stitch(images, depths, cams, pano_height=96)
    assert pano.mask.sum() > 2000

    v, u = np.nonzero(pano.mask)
    dirs = pixel_to_dir(u + 0.5, v + 0.5, pano.width, pano.height)
    oracle = env_lookup(env, dirs)
    mse = float(np.mean((pano.image[v, u] - oracle) ** 2))
    psnr = 10.0 * np.log10(1.0 / mse)
    assert psnr > 30.0


def test_stitch_permutation_invariant():
    env = _smooth_env_ldr(48)
    cams, images, depths = _dome_cameras_and_images(env)
    # Same center for both, otherwise permuting changes the pano origin.
    cams = [cams[0], dataclasses.replace(cams[1], center=cams[0].center)]
    fwd = stitch(images, depths, cams, pano_height=48)
    rev = stitch(images[::-1], depths[::-1], cams[::-1], pano_height=48)
    np.testing.assert_array_equal(fwd.count, rev.count)
    np.testing.assert_allclose(fwd.image, rev.image, atol=1e-12)


def test_stitch_origin_parallax():
    # Finite-depth points re-express relative to the panorama origin:
    # the camera's center pixel sees a point at (0,0,10), which is
    # straight up (+z, top row) from an on-axis origin below it but at
    # 45 degrees zenith from an origin shifted sideways by the same
    # amount it is below.
    cam = look_at([0.0, 0.0, 0.0], [0.0, 0.0, 10.0], width=3, height=3,
                  fx=1.5, fy=1.5, up=(0.0, 1.0, 0.0))
    image = np.full((3, 3, 3), 0.5)
    depth = np.full((3, 3), 10.0)
    on_axis = stitch([image], [depth], [cam], pano_height=32,
                     origin=[0.0, 0.0, 5.0])
    off_axis = stitch([image], [depth], [cam], pano_height=32,
                      origin=[5.0, 0.0, 5.0])
    assert on_axis.mask[0].any()
    assert not off_axis.mask[0].any()
    assert not np.array_equal(on_axis.count, off_axis.count)


def test_stitch_mismatched_lengths():
    cam = look_at([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], width=3, height=3,
                  fx=1.0, fy=1.0)
    image = np.full((3, 3, 3), 0.5)
    depth = np.full((3, 3), np.inf)
    with pytest.raises(PreconditionError, match="lengths"):
        stitch([image, image], [depth], [cam], pano_height=16)
    with pytest.raises(PreconditionError, match="at least one"):
        stitch([], [], [], pano_height=16)
    with pytest.raises(PreconditionError, match="does not match"):
        stitch([np.full((4, 3, 3), 0.5)], [depth], [cam], pano_height=16)
    with pytest.raises(PreconditionError, match="LDR"):
        stitch([np.full((3, 3, 3), 1.5)], [depth], [cam], pano_height=16)


def test_stitch_counts_cover_mask():
    env = _smooth_env_ldr(48)
    cams, images, depths = _dome_cameras_and_images(env)
    pano = stitch(images, depths, cams, pano_height=48)
    assert np.array_equal(pano.mask, pano.count > 0)
    assert pano.count[pano.mask].min() >= 1
    np.testing.assert_array_equal(pano.image[~pano.mask], 0.0)


# ---------------------------------------------------------------- fill_holes

def _pano_from(image, mask):
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    img = np.where(mask[..., None], image, 0.0)
    return Panorama(image=img, count=mask.astype(np.int64))


def test_fill_holes_fully_observed_unchanged():
    image = _distinct_image(8, 16, seed=3)
    pano = _pano_from(image, np.ones((8, 16), dtype=bool))
    out = fill_holes(pano)
    np.testing.assert_array_equal(out, image)


def test_fill_holes_constant_boundary():
    mask = np.ones((12, 24), dtype=bool)
    mask[4:8, 6:12] = False
    pano = _pano_from(np.full((12, 24, 3), 0.625), mask)
    out = fill_holes(pano)
    np.testing.assert_allclose(out, 0.625, atol=1e-12)


def test_fill_holes_linear_gradient_band():
    # [DERIVED] discrete harmonic oracle: a hole spanning full columns
    # of a horizontal linear ramp fills with the linear interpolant.
    h, w = 16, 48
    ramp = np.linspace(0.1, 0.9, w)
    image = np.broadcast_to(ramp[None, :, None], (h, w, 3)).copy()
    mask = np.ones((h, w), dtype=bool)
    mask[:, 20:28] = False
    out = fill_holes(_pano_from(image, mask))
    assert np.abs(out - image).max() < 0.02 * 0.8


def test_fill_holes_iteration_cap():
    mask = np.ones((8, 16), dtype=bool)
    mask[2:6, 4:12] = False
    image = _distinct_image(8, 16, seed=7)
    pano = _pano_from(image, mask)
    capped = fill_holes(pano, iterations=3)
    frozen = fill_holes(pano, iterations=3)
    np.testing.assert_array_equal(capped, frozen)
    # Observed texels never move regardless of iteration count.
    np.testing.assert_array_equal(capped[mask], image[mask])


def test_fill_holes_rejects_empty():
    pano = Panorama(image=np.zeros((4, 8, 3)),
                    count=np.zeros((4, 8), dtype=np.int64))
    with pytest.raises(PreconditionError, match="fully-unobserved"):
        fill_holes(pano)


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_fill_holes_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    h, w = 6, 12
    image = rng.uniform(0.0, 1.0, size=(h, w, 3))
    mask = rng.uniform(size=(h, w)) < 0.5
    mask.flat[rng.integers(h * w)] = True  # at least one observed texel
    out = fill_holes(_pano_from(image, mask), iterations=40)
    lo, hi = image[mask].min(), image[mask].max()
    assert out.min() >= lo - 1e-12
    assert out.max() <= hi + 1e-12


# -------------------------------------------------------------------- types

def test_depthmap_validation():
    DepthMap(np.full((2, 3), np.inf))
    DepthMap(np.array([[1.0, 2.0]]))
    with pytest.raises(PreconditionError, match="positive"):
        DepthMap(np.array([[0.0, 1.0]]))
    with pytest.raises(PreconditionError, match="positive"):
        DepthMap(np.array([[np.nan, 1.0]]))
    with pytest.raises(PreconditionError, match="HxW"):
        DepthMap(np.zeros(3) + 1.0)


def test_panorama_validation():
    with pytest.raises(PreconditionError, match="HxWx3"):
        Panorama(image=np.zeros((4, 8)), count=np.zeros((4, 8), np.int64))
    with pytest.raises(PreconditionError, match="count shape"):
        Panorama(image=np.zeros((4, 8, 3)), count=np.zeros((4, 4), np.int64))
    with pytest.raises(PreconditionError, match="non-negative"):
        Panorama(image=np.zeros((2, 4, 3)),
                 count=np.full((2, 4), -1, dtype=np.int64))
