"""Ray queries against a flattened BVH.

Scalar traversal routines are numba-compiled and shared by the batched
wrappers here and by the rendering kernels.  Both closest-hit and
any-hit use the strict open interval (t_min, t_max), so `occluded`
agrees with `intersect` on every query by construction.  Ray t values
are metric distances when directions are unit length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from relightkit.geometry.bvh import Bvh
from relightkit.geometry.mesh import Ray, TriangleMesh

_STACK_DEPTH = 64
_INF = np.inf


@njit(cache=True, inline="always")
def _safe_inv(d):
    # Zero components get a huge finite inverse; keeps the slab test
    # NaN-free without branching on every axis inside the loop.
    if abs(d) > 1e-300:
        return 1.0 / d
    return 1e300


@njit(cache=True, inline="always")
def _aabb_near(ox, oy, oz, ix, iy, iz, t_lo, t_hi, bmin, bmax, n):
    """Entry distance of ray vs node AABB, or inf when the slab test fails."""
    t1 = (bmin[n, 0] - ox) * ix
    t2 = (bmax[n, 0] - ox) * ix
    lo = min(t1, t2)
    hi = max(t1, t2)
    t1 = (bmin[n, 1] - oy) * iy
    t2 = (bmax[n, 1] - oy) * iy
    lo = max(lo, min(t1, t2))
    hi = min(hi, max(t1, t2))
    t1 = (bmin[n, 2] - oz) * iz
    t2 = (bmax[n, 2] - oz) * iz
    lo = max(lo, min(t1, t2))
    hi = min(hi, max(t1, t2))
    if hi >= lo and hi > t_lo and lo < t_hi:
        return lo
    return _INF


@njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k):
    """Moeller-Trumbore; returns (t, u, v) with t = inf on miss."""
    e1x, e1y, e1z = e1[k, 0], e1[k, 1], e1[k, 2]
    e2x, e2y, e2z = e2[k, 0], e2[k, 1], e2[k, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-300:
        return _INF, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[k, 0]
    sy = oy - v0[k, 1]
    sz = oz - v0[k, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return _INF, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return _INF, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True)
def closest_hit_scalar(ox, oy, oz, dx, dy, dz, t_min, t_max,
                       bmin, bmax, left, right, start, count, v0, e1, e2):
    """Nearest hit along one ray; returns (t, permuted_tri, u, v).

    permuted_tri is an index into the BVH triangle order, -1 on miss.
    """
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    best_t = t_max
    best_k = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(_STACK_DEPTH, np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _aabb_near(ox, oy, oz, ix, iy, iz, t_min, best_t,
                      bmin, bmax, node) == _INF:
            continue
        l = left[node]
        if l < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                t, u, v = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k)
                if t > t_min and t < best_t:
                    best_t = t
                    best_k = k
                    best_u = u
                    best_v = v
        else:
            r = right[node]
            dl = _aabb_near(ox, oy, oz, ix, iy, iz, t_min, best_t,
                            bmin, bmax, l)
            dr = _aabb_near(ox, oy, oz, ix, iy, iz, t_min, best_t,
                            bmin, bmax, r)
            if dl <= dr:
                if dr < _INF:
                    stack[sp] = r
                    sp += 1
                if dl < _INF:
                    stack[sp] = l
                    sp += 1
            else:
                if dl < _INF:
                    stack[sp] = l
                    sp += 1
                if dr < _INF:
                    stack[sp] = r
                    sp += 1
    if best_k < 0:
        return _INF, -1, 0.0, 0.0
    return best_t, best_k, best_u, best_v


@njit(cache=True)
def any_hit_scalar(ox, oy, oz, dx, dy, dz, t_min, t_max,
                   bmin, bmax, left, right, start, count, v0, e1, e2):
    """True iff any triangle is hit with t in the open (t_min, t_max)."""
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(_STACK_DEPTH, np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _aabb_near(ox, oy, oz, ix, iy, iz, t_min, t_max,
                      bmin, bmax, node) == _INF:
            continue
        l = left[node]
        if l < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                t, u, v = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k)
                if t > t_min and t < t_max:
                    return True
        else:
            stack[sp] = l
            sp += 1
            stack[sp] = right[node]
            sp += 1
    return False


@njit(cache=True, parallel=True)
def _closest_hit_batch(origins, dirs, t_min, t_max, bmin, bmax, left, right,
                       start, count, v0, e1, e2, out_t, out_k, out_u, out_v):
    for r in prange(origins.shape[0]):
        t, k, u, v = closest_hit_scalar(
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], t_min, t_max,
            bmin, bmax, left, right, start, count, v0, e1, e2)
        out_t[r] = t
        out_k[r] = k
        out_u[r] = u
        out_v[r] = v


@njit(cache=True, parallel=True)
def _any_hit_batch(origins, dirs, t_min, t_max, bmin, bmax, left, right,
                   start, count, v0, e1, e2, out):
    for r in prange(origins.shape[0]):
        out[r] = any_hit_scalar(
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], t_min, t_max,
            bmin, bmax, left, right, start, count, v0, e1, e2)


@dataclass
class Hit:
    """Batched intersection result; miss entries have tri == -1, t == inf.

    bary holds (w0, w1, w2) weights of the face's three vertices.
    normal is the barycentric-interpolated unit normal, albedo the
    interpolated per-vertex albedo; both are zero for misses.
    """

    t: np.ndarray
    tri: np.ndarray
    bary: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.tri >= 0


def _bvh_args(bvh: Bvh):
    return (bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
            bvh.start, bvh.count, bvh.tri_v0, bvh.tri_e1, bvh.tri_e2)


def _as_ray_arrays(origins, directions):
    o = np.ascontiguousarray(np.atleast_2d(np.asarray(origins, dtype=np.float64)))
    d = np.ascontiguousarray(np.atleast_2d(np.asarray(directions, dtype=np.float64)))
    if o.shape != d.shape or o.shape[-1] != 3:
        raise ValueError(f"origins {o.shape} and directions {d.shape} "
                         "must both be (n, 3)")
    return o, d


def intersect(mesh: TriangleMesh, bvh: Bvh, origins, directions=None,
              t_min: float = 0.0, t_max: float = np.inf) -> Hit:
    """Nearest hits for a batch of rays (or a single Ray object)."""
    if isinstance(origins, Ray):
        ray = origins
        origins, directions = ray.origin, ray.direction
        t_min, t_max = ray.t_min, ray.t_max
    o, d = _as_ray_arrays(origins, directions)
    n = o.shape[0]
    out_t = np.empty(n)
    out_k = np.empty(n, dtype=np.int32)
    out_u = np.empty(n)
    out_v = np.empty(n)
    _closest_hit_batch(o, d, float(t_min), float(t_max), *_bvh_args(bvh),
                       out_t, out_k, out_u, out_v)
    hit = out_k >= 0
    tri = np.full(n, -1, dtype=np.int32)
    tri[hit] = bvh.order[out_k[hit]]
    bary = np.zeros((n, 3))
    bary[hit, 0] = 1.0 - out_u[hit] - out_v[hit]
    bary[hit, 1] = out_u[hit]
    bary[hit, 2] = out_v[hit]
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    if hit.any():
        face = mesh.faces[tri[hit]]
        nrm = np.einsum("nk,nkj->nj", bary[hit], mesh.normals[face])
        nlen = np.linalg.norm(nrm, axis=1, keepdims=True)
        normal[hit] = nrm / np.maximum(nlen, 1e-300)
        albedo[hit] = np.einsum("nk,nkj->nj", bary[hit], mesh.albedo[face])
    return Hit(t=out_t, tri=tri, bary=bary, normal=normal, albedo=albedo)


def occluded(bvh: Bvh, origins, directions=None, t_min: float = 0.0,
             t_max: float = np.inf) -> np.ndarray:
    """Boolean any-hit test per ray over the open interval (t_min, t_max)."""
    if isinstance(origins, Ray):
        ray = origins
        origins, directions = ray.origin, ray.direction
        t_min, t_max = ray.t_min, ray.t_max
    o, d = _as_ray_arrays(origins, directions)
    out = np.empty(o.shape[0], dtype=np.bool_)
    _any_hit_batch(o, d, float(t_min), float(t_max), *_bvh_args(bvh), out)
    return out
