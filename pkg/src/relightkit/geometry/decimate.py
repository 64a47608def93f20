"""Mesh simplification by greedy quadric-error edge collapse.

Each vertex accumulates the plane quadrics of its incident faces; an
edge collapse moves the dying endpoint onto the survivor, so surviving
vertices keep their original position, normal, and albedo.  Candidate
collapses are ordered by quadric error in a lazy priority queue with
(cost, vertex ids) tie-breaking, which makes the whole reduction
deterministic.  Collapses that would flip a face normal or pinch the
mesh (link condition) are rejected.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from relightkit.errors import PreconditionError
from relightkit.geometry.mesh import TriangleMesh

# Quadric stored as the 10 upper-triangle coefficients of the symmetric
# 4x4 form: [a11 a12 a13 a14 a22 a23 a24 a33 a34 a44].


def _plane_quadric(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = math.sqrt(float(n @ n))
    if norm < 1e-300:
        return None
    n = n / norm
    d = -float(n @ p0)
    nx, ny, nz = float(n[0]), float(n[1]), float(n[2])
    return np.array([nx * nx, nx * ny, nx * nz, nx * d,
                     ny * ny, ny * nz, ny * d,
                     nz * nz, nz * d, d * d])


def _quadric_error(q, v):
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + 2 * q[3] * x
            + q[4] * y * y + 2 * q[5] * y * z + 2 * q[6] * y
            + q[7] * z * z + 2 * q[8] * z + q[9])


def decimate(mesh: TriangleMesh, target_ratio: float = 0.1) -> TriangleMesh:
    """Reduce the face count to about target_ratio of the input.

    Stops at the nearest reachable count when topological locks or
    flip rejections run the candidate queue dry.  Unreferenced vertices
    are dropped from the output.
    """
    if not (0.0 < target_ratio <= 1.0):
        raise PreconditionError(f"target_ratio must be in (0, 1], "
                                f"got {target_ratio}")
    n_faces = mesh.n_faces
    target = max(1, int(math.ceil(n_faces * target_ratio)))
    if n_faces <= target:
        return mesh.copy()

    verts = mesh.vertices.copy()
    faces = mesh.faces.astype(np.int64).copy()
    n_verts = len(verts)

    quadrics = np.zeros((n_verts, 10))
    vert_faces = [set() for _ in range(n_verts)]
    face_alive = np.ones(n_faces, dtype=bool)
    for fi in range(n_faces):
        a, b, c = faces[fi]
        vert_faces[a].add(fi)
        vert_faces[b].add(fi)
        vert_faces[c].add(fi)
        q = _plane_quadric(verts[a], verts[b], verts[c])
        if q is not None:
            quadrics[a] += q
            quadrics[b] += q
            quadrics[c] += q

    version = np.zeros(n_verts, dtype=np.int64)
    alive = np.ones(n_verts, dtype=bool)

    def neighbors(v):
        out = set()
        for fi in vert_faces[v]:
            for w in faces[fi]:
                if w != v:
                    out.add(int(w))
        return out

    def push_edge(heap, a, b):
        if a > b:
            a, b = b, a
        q = quadrics[a] + quadrics[b]
        cost_b = _quadric_error(q, verts[b])   # collapse a onto b
        cost_a = _quadric_error(q, verts[a])   # collapse b onto a
        if cost_b <= cost_a:
            cost, survivor = cost_b, b
        else:
            cost, survivor = cost_a, a
        heapq.heappush(heap, (max(cost, 0.0), a, b, survivor,
                              int(version[a]), int(version[b])))

    heap: list = []
    seen = set()
    for fi in range(n_faces):
        a, b, c = (int(x) for x in faces[fi])
        for e in ((min(a, b), max(a, b)), (min(b, c), max(b, c)),
                  (min(a, c), max(a, c))):
            if e not in seen:
                seen.add(e)
                push_edge(heap, *e)
    del seen

    live_faces = n_faces
    while live_faces > target and heap:
        cost, a, b, survivor, va, vb = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        if version[a] != va or version[b] != vb:
            continue
        dying = a if survivor == b else b
        shared = vert_faces[a] & vert_faces[b]
        if not shared:
            continue                     # endpoints no longer form an edge
        # Link condition: shared neighbors must be exactly the opposite
        # corners of the shared faces, else the collapse pinches.
        opposite = set()
        for fi in shared:
            for w in faces[fi]:
                if w != a and w != b:
                    opposite.add(int(w))
        if (neighbors(a) & neighbors(b)) != opposite:
            continue
        # Normal-flip and degeneracy test on the dying vertex's faces.
        sp = verts[survivor]
        rejected = False
        moving = vert_faces[dying] - shared
        for fi in moving:
            tri = faces[fi]
            old = np.cross(verts[tri[1]] - verts[tri[0]],
                           verts[tri[2]] - verts[tri[0]])
            pts = [sp if v == dying else verts[v] for v in tri]
            new = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            new_len = math.sqrt(float(new @ new))
            if new_len < 1e-16 or float(old @ new) <= 0.0:
                rejected = True
                break
        if rejected:
            continue

        # Commit: retarget faces, kill shared ones, merge quadrics.
        quadrics[survivor] += quadrics[dying]
        for fi in shared:
            face_alive[fi] = False
            live_faces -= 1
            for v in faces[fi]:
                vert_faces[v].discard(fi)
        for fi in moving:
            tri = faces[fi]
            faces[fi] = [survivor if v == dying else v for v in tri]
            vert_faces[survivor].add(fi)
        vert_faces[dying].clear()
        alive[dying] = False
        version[dying] += 1
        version[survivor] += 1
        for w in sorted(neighbors(survivor)):
            push_edge(heap, min(survivor, w), max(survivor, w))

    keep = face_alive
    out_faces = faces[keep]
    used = np.unique(out_faces)
    remap = np.full(n_verts, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(verts[used], remap[out_faces].astype(np.int32),
                        mesh.normals[used].copy(), mesh.albedo[used].copy(),
                        mesh.tags[keep].copy())
