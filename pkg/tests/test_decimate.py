"""Quadric decimation: fidelity, exact planes, attribute carry."""

import numpy as np
import pytest

from relightkit.errors import PreconditionError
from relightkit.geometry import TriangleMesh, decimate, validate_mesh


def grid_plane(k=10):
    gx, gy = np.meshgrid(np.linspace(0, 1, k + 1), np.linspace(0, 1, k + 1),
                         indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros((k + 1) ** 2)], axis=1)
    faces = []
    for i in range(k):
        for j in range(k):
            a = i * (k + 1) + j
            b, c, d = a + 1, a + k + 1, a + k + 2
            faces += [[a, b, d], [a, d, c]]
    n = np.tile([0.0, 0.0, 1.0], (len(verts), 1))
    albedo = np.random.default_rng(0).uniform(0, 1, (len(verts), 3))
    return TriangleMesh(verts, np.array(faces, dtype=np.int32), n, albedo)


def test_sphere_decimation_fidelity(sphere_mesh_64):
    mesh = decimate(sphere_mesh_64, 0.2)
    target = int(np.ceil(sphere_mesh_64.n_faces * 0.2))
    assert mesh.n_faces <= target
    assert mesh.n_faces > 0.5 * target     # did not collapse into nothing
    validate_mesh(mesh)
    rng = np.random.default_rng(1)
    fidx = rng.integers(0, mesh.n_faces, 20_000)
    b = rng.random((20_000, 2))
    b = np.where((b.sum(axis=1) > 1)[:, None], 1 - b, b)
    w = np.stack([1 - b[:, 0] - b[:, 1], b[:, 0], b[:, 1]], axis=1)
    pts = np.einsum("nk,nkj->nj", w, mesh.vertices[mesh.faces[fidx]])
    dist = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
    assert np.percentile(dist, 95) < 0.02


def test_plane_grid_stays_planar():
    mesh = decimate(grid_plane(10), 0.1)
    assert mesh.n_faces <= 20
    assert np.abs(mesh.vertices[:, 2]).max() == 0.0


def test_survivor_keeps_own_attributes():
    src = grid_plane(8)
    mesh = decimate(src, 0.2)
    # Every output vertex must be an exact copy of some input vertex,
    # including its albedo.
    src_rows = {tuple(np.round(v, 12)): tuple(a)
                for v, a in zip(src.vertices, src.albedo)}
    for v, a in zip(mesh.vertices, mesh.albedo):
        key = tuple(np.round(v, 12))
        assert key in src_rows
        assert src_rows[key] == tuple(a)


def test_no_dangling_vertices(sphere_mesh_32):
    mesh = decimate(sphere_mesh_32, 0.3)
    used = np.unique(mesh.faces)
    assert len(used) == mesh.n_vertices


def test_ratio_one_is_identity_copy(sphere_mesh_32):
    mesh = decimate(sphere_mesh_32, 1.0)
    assert mesh.n_faces == sphere_mesh_32.n_faces
    assert np.array_equal(mesh.vertices, sphere_mesh_32.vertices)


def test_invalid_ratio_rejected(sphere_mesh_32):
    with pytest.raises(PreconditionError):
        decimate(sphere_mesh_32, 0.0)
    with pytest.raises(PreconditionError):
        decimate(sphere_mesh_32, 1.5)


def test_decimation_is_deterministic(sphere_mesh_32):
    a = decimate(sphere_mesh_32, 0.25)
    b = decimate(sphere_mesh_32, 0.25)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.faces, b.faces)
