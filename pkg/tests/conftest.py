"""Shared fixtures: canonical analytic meshes, grids, and scan data."""

import numpy as np
import pytest

from relightkit.geometry import Ray, SdfGrid, TriangleMesh, marching_cubes
from relightkit.recon import RangeSample, ReconConfig, fit_sdf


def sphere_sdf_grid(resolution=64, half_extent=1.5, radius=1.0) -> SdfGrid:
    xs = np.linspace(-half_extent, half_extent, resolution + 1)
    X, Y, Z = np.meshgrid(xs, xs, xs, indexing="ij")
    values = np.sqrt(X * X + Y * Y + Z * Z) - radius
    return SdfGrid([-half_extent] * 3, [half_extent] * 3, values)


@pytest.fixture(scope="session")
def sphere_grid_64():
    return sphere_sdf_grid(64)


@pytest.fixture(scope="session")
def sphere_mesh_64(sphere_grid_64):
    return marching_cubes(sphere_grid_64)


@pytest.fixture(scope="session")
def sphere_mesh_32():
    return marching_cubes(sphere_sdf_grid(32))


def random_soup(rng, n_tris=200, scale=1.0) -> TriangleMesh:
    """Random triangle soup in a cube, unit vertex normals, mid albedo."""
    base = rng.uniform(-scale, scale, (n_tris, 3))
    verts = (base[:, None, :]
             + rng.uniform(-0.3 * scale, 0.3 * scale, (n_tris, 3, 3)))
    verts = verts.reshape(-1, 3)
    faces = np.arange(3 * n_tris, dtype=np.int32).reshape(-1, 3)
    normals = rng.normal(size=(3 * n_tris, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    albedo = rng.uniform(0.0, 1.0, (3 * n_tris, 3))
    return TriangleMesh(verts, faces, normals, albedo)


def random_unit_vectors(rng, n) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_scan(n_rays=4096, radius=1.0, ring_radius=3.0, ring_z=1.5,
                n_sky=512, seed=5) -> list[RangeSample]:
    """Ring scan of a unit sphere with exact analytic depths.

    Sensors sit on two rings above and below the equator.  Each ray aims
    at a Fibonacci-distributed sphere point from the ring position that
    faces it (same azimuth, matching hemisphere), so every aimed point
    is also the first intersection and the hits tile the whole sphere
    near-uniformly.  Depths are the analytic ray-sphere solutions.
    Extra rays that miss the sphere provide sky (free-space)
    observations.
    """
    k = np.arange(n_rays)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    tz = 1.0 - 2.0 * (k + 0.5) / n_rays
    tr = np.sqrt(np.maximum(0.0, 1.0 - tz * tz))
    az = golden * k
    targets = radius * np.stack(
        [tr * np.cos(az), tr * np.sin(az), tz], axis=1)
    origins = np.stack([ring_radius * np.cos(az),
                        ring_radius * np.sin(az),
                        np.where(tz >= 0, ring_z, -ring_z)], axis=1)
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    b = np.einsum("nd,nd->n", origins, dirs)
    c = np.einsum("nd,nd->n", origins, origins) - radius * radius
    disc = b * b - c
    depth = -b - np.sqrt(np.maximum(disc, 0.0))
    samples = [RangeSample(Ray(o, d), t)
               for o, d, t in zip(origins, dirs, depth)]

    rng = np.random.default_rng(seed)
    added = 0
    while added < n_sky:
        o = origins[int(rng.integers(0, n_rays))]
        d = random_unit_vectors(rng, 1)[0]
        if np.dot(o, d) > 0:
            d = -d                      # point broadly back toward the scene
        bb = float(np.dot(o, d))
        if bb * bb - (float(np.dot(o, o)) - radius * radius) < 0.0:
            samples.append(RangeSample(Ray(o, d), np.inf))
            added += 1
    return samples


@pytest.fixture(scope="session")
def sphere_scan_samples():
    return sphere_scan()


@pytest.fixture(scope="session")
def fitted_sphere(sphere_scan_samples):
    """Fitted 48-cell sphere SDF plus its loss trace, shared by suites."""
    trace_rows = []
    grid = fit_sdf(sphere_scan_samples, ([-1.5] * 3, [1.5] * 3), 48,
                   ReconConfig(), trace_rows=trace_rows)
    return grid, trace_rows
