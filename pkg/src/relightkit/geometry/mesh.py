"""Triangle mesh container and basic construction helpers.

A mesh stores per-vertex unit normals and per-vertex diffuse albedo in
[0, 1]^3, plus an optional per-face integer tag used to remember which
actor a triangle came from after scene assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from relightkit.errors import PreconditionError


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with per-vertex shading attributes.

    Attributes:
        vertices: (n, 3) float64 positions in meters.
        faces: (m, 3) int32 vertex indices, counter-clockwise winding.
        normals: (n, 3) float64 unit normals.
        albedo: (n, 3) float64 diffuse reflectance in [0, 1].
        tags: (m,) int32 per-face provenance tag (0 = background).
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    tags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.albedo = np.ascontiguousarray(self.albedo, dtype=np.float64)
        if self.tags is None:
            self.tags = np.zeros(len(self.faces), dtype=np.int32)
        else:
            self.tags = np.ascontiguousarray(self.tags, dtype=np.int32)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.faces.copy(),
                            self.normals.copy(), self.albedo.copy(),
                            self.tags.copy())


@dataclass(frozen=True)
class Ray:
    """Single ray with a parametric interval (t_min, t_max)."""

    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf


def validate_mesh(mesh: TriangleMesh) -> None:
    """Check structural invariants; raise PreconditionError on violation.

    Verifies finite vertices, in-range face indices, unit normals
    (within 1e-6), and albedo inside [0, 1].
    """
    v, f = mesh.vertices, mesh.faces
    if v.ndim != 2 or v.shape[1] != 3:
        raise PreconditionError(f"vertices must be (n, 3), got {v.shape}")
    if f.ndim != 2 or f.shape[1] != 3:
        raise PreconditionError(f"faces must be (m, 3), got {f.shape}")
    if not np.isfinite(v).all():
        raise PreconditionError("vertices contain non-finite values")
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise PreconditionError(
            f"face indices out of range [0, {len(v)}): "
            f"min {f.min()}, max {f.max()}")
    if mesh.normals.shape != v.shape:
        raise PreconditionError("normals shape must match vertices")
    if mesh.albedo.shape != v.shape:
        raise PreconditionError("albedo shape must match vertices")
    if len(v):
        norm = np.linalg.norm(mesh.normals, axis=1)
        if not np.allclose(norm, 1.0, atol=1e-6):
            bad = int(np.argmax(np.abs(norm - 1.0)))
            raise PreconditionError(
                f"normals must be unit length; vertex {bad} has |n| = {norm[bad]:.6g}")
        if mesh.albedo.min() < 0.0 or mesh.albedo.max() > 1.0:
            raise PreconditionError("albedo must lie in [0, 1]")
    if mesh.tags.shape != (len(f),):
        raise PreconditionError("tags shape must be (n_faces,)")


def mesh_bounds(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box as (min, max) corners."""
    if mesh.n_vertices == 0:
        raise PreconditionError("empty mesh has no bounds")
    return mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)


def mesh_diameter(mesh: TriangleMesh) -> float:
    """Length of the bounding-box diagonal; the scene scale reference."""
    lo, hi = mesh_bounds(mesh)
    return float(np.linalg.norm(hi - lo))


def transform_mesh(mesh: TriangleMesh, rotation: np.ndarray,
                   translation: np.ndarray) -> TriangleMesh:
    """Apply a rigid transform x -> R x + t; normals rotate with R."""
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    return TriangleMesh(mesh.vertices @ R.T + t, mesh.faces.copy(),
                        mesh.normals @ R.T, mesh.albedo.copy(),
                        mesh.tags.copy())


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes, offsetting face indices; tags pass through."""
    if not meshes:
        raise PreconditionError("merge_meshes needs at least one mesh")
    verts, faces, normals, albedo, tags = [], [], [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        normals.append(m.normals)
        albedo.append(m.albedo)
        tags.append(m.tags)
        offset += m.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces),
                        np.concatenate(normals), np.concatenate(albedo),
                        np.concatenate(tags))


def retag_mesh(mesh: TriangleMesh, tag: int) -> TriangleMesh:
    """Return a copy whose every face carries the given tag."""
    out = mesh.copy()
    out.tags[:] = tag
    return out


def plane_mesh(size: float = 10.0, center=(0.0, 0.0, 0.0),
               albedo=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Square two-triangle plane in z = center_z, normal +z."""
    cx, cy, cz = center
    h = size / 2.0
    vertices = np.array([
        [cx - h, cy - h, cz], [cx + h, cy - h, cz],
        [cx + h, cy + h, cz], [cx - h, cy + h, cz],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    alb = np.tile(np.asarray(albedo, dtype=np.float64), (4, 1))
    return TriangleMesh(vertices, faces, normals, alb)


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0),
             albedo=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Axis-aligned box with duplicated corners so face normals stay hard."""
    sx, sy, sz = (np.asarray(size, dtype=np.float64) / 2.0)
    c = np.asarray(center, dtype=np.float64)
    # Each row: face normal axis, sign.
    specs = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]
    verts, faces, normals = [], [], []
    half = np.array([sx, sy, sz])
    for axis, sign in specs:
        u, v = (axis + 1) % 3, (axis + 2) % 3
        base = len(verts)
        for du, dv in [(-1, -1), (1, -1), (1, 1), (-1, 1)]:
            p = np.zeros(3)
            p[axis] = sign * half[axis]
            p[u] = du * half[u]
            p[v] = dv * half[v]
            verts.append(c + p)
            n = np.zeros(3)
            n[axis] = float(sign)
            normals.append(n)
        if sign > 0:
            faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
        else:
            faces += [[base, base + 2, base + 1], [base, base + 3, base + 2]]
    alb = np.tile(np.asarray(albedo, dtype=np.float64), (len(verts), 1))
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int32),
                        np.array(normals), alb)
