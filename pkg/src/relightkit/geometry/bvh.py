"""Bounding volume hierarchy with a binned surface-area-heuristic build.

The build is a single deterministic pass: centroids are binned into 32
fixed buckets along the widest centroid axis, the cheapest of the 31
candidate planes wins, and partitions are stable, so the same triangle
soup always produces the same tree.  Nodes are flattened into parallel
arrays that the numba traversal kernels consume directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relightkit.errors import PreconditionError
from relightkit.geometry.mesh import TriangleMesh

N_BINS = 32
LEAF_SIZE = 4
# Above this count a node with a degenerate SAH split falls back to a
# median split instead of becoming a giant leaf.
MAX_FORCED_LEAF = 16


@dataclass
class Bvh:
    """Flattened BVH over a triangle mesh.

    Leaf nodes have left == -1 and reference the permuted triangle range
    [start, start + count).  Triangle vertices are stored pre-permuted
    (v0, e1, e2 per leaf order) so leaf scans are contiguous; `order`
    maps permuted position back to the original face index.
    """

    bounds_min: np.ndarray   # (n_nodes, 3) float64
    bounds_max: np.ndarray   # (n_nodes, 3) float64
    left: np.ndarray         # (n_nodes,) int32, -1 for leaves
    right: np.ndarray        # (n_nodes,) int32
    start: np.ndarray        # (n_nodes,) int32
    count: np.ndarray        # (n_nodes,) int32
    order: np.ndarray        # (n_tris,) int32 permuted -> original face
    tri_v0: np.ndarray       # (n_tris, 3) float64
    tri_e1: np.ndarray       # (n_tris, 3) float64
    tri_e2: np.ndarray       # (n_tris, 3) float64

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_triangles(self) -> int:
        return len(self.order)


def _surface_area(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = np.maximum(hi - lo, 0.0)
    return 2.0 * (d[..., 0] * d[..., 1] + d[..., 1] * d[..., 2]
                  + d[..., 2] * d[..., 0])


def build_bvh(mesh: TriangleMesh) -> Bvh:
    """Build the hierarchy for a mesh; requires at least one triangle."""
    if mesh.n_faces == 0:
        raise PreconditionError("cannot build a BVH over an empty mesh")
    tris = mesh.vertices[mesh.faces]          # (m, 3, 3)
    tri_lo = tris.min(axis=1)
    tri_hi = tris.max(axis=1)
    centroids = tris.mean(axis=1)
    m = mesh.n_faces

    order = np.arange(m, dtype=np.int64)
    bounds_min, bounds_max = [], []
    left, right, start, count = [], [], [], []

    def new_node():
        bounds_min.append(None)
        bounds_max.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    root = new_node()
    stack = [(root, 0, m)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        nb_lo = tri_lo[idx].min(axis=0)
        nb_hi = tri_hi[idx].max(axis=0)
        bounds_min[node], bounds_max[node] = nb_lo, nb_hi
        n = hi - lo

        split = None
        if n > LEAF_SIZE:
            c = centroids[idx]
            c_lo, c_hi = c.min(axis=0), c.max(axis=0)
            axis = int(np.argmax(c_hi - c_lo))
            extent = c_hi[axis] - c_lo[axis]
            if extent > 0.0:
                rel = (c[:, axis] - c_lo[axis]) / extent
                bins = np.minimum((rel * N_BINS).astype(np.int64), N_BINS - 1)
                # Prefix/suffix bin bounds and counts for the 31 planes.
                bin_cnt = np.bincount(bins, minlength=N_BINS)
                bin_lo = np.full((N_BINS, 3), np.inf)
                bin_hi = np.full((N_BINS, 3), -np.inf)
                for b in np.nonzero(bin_cnt)[0]:
                    sel = bins == b
                    bin_lo[b] = tri_lo[idx[sel]].min(axis=0)
                    bin_hi[b] = tri_hi[idx[sel]].max(axis=0)
                cnt_l = np.cumsum(bin_cnt)[:-1]
                cnt_r = n - cnt_l
                lo_l = np.minimum.accumulate(bin_lo, axis=0)[:-1]
                hi_l = np.maximum.accumulate(bin_hi, axis=0)[:-1]
                lo_r = np.minimum.accumulate(bin_lo[::-1], axis=0)[::-1][1:]
                hi_r = np.maximum.accumulate(bin_hi[::-1], axis=0)[::-1][1:]
                cost = np.where(
                    (cnt_l > 0) & (cnt_r > 0),
                    _surface_area(lo_l, hi_l) * cnt_l
                    + _surface_area(lo_r, hi_r) * cnt_r,
                    np.inf)
                best = int(np.argmin(cost))
                if np.isfinite(cost[best]):
                    parent_area = _surface_area(nb_lo, nb_hi)
                    split_cost = 1.0 + cost[best] / max(parent_area, 1e-300)
                    if split_cost < n or n > MAX_FORCED_LEAF:
                        split = bins <= best
            if split is None and n > MAX_FORCED_LEAF:
                # Degenerate centroids: stable median split on the axis.
                sort = np.argsort(c[:, axis], kind="stable")
                half = n // 2
                split = np.zeros(n, dtype=bool)
                split[sort[:half]] = True

        if split is None or split.all() or not split.any():
            start[node], count[node] = lo, n
            continue
        # Stable partition keeps determinism independent of input quirks.
        order[lo:hi] = np.concatenate([idx[split], idx[~split]])
        mid = lo + int(split.sum())
        l_id, r_id = new_node(), new_node()
        left[node], right[node] = l_id, r_id
        stack.append((r_id, mid, hi))
        stack.append((l_id, lo, mid))

    order32 = order.astype(np.int32)
    tri = tris[order]
    return Bvh(
        bounds_min=np.ascontiguousarray(np.stack(bounds_min)),
        bounds_max=np.ascontiguousarray(np.stack(bounds_max)),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        start=np.asarray(start, dtype=np.int32),
        count=np.asarray(count, dtype=np.int32),
        order=order32,
        tri_v0=np.ascontiguousarray(tri[:, 0]),
        tri_e1=np.ascontiguousarray(tri[:, 1] - tri[:, 0]),
        tri_e2=np.ascontiguousarray(tri[:, 2] - tri[:, 0]),
    )
