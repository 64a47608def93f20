"""Isosurface extraction from an SDF grid at the zero level set.

Nodes with s <= 0 count as inside (the tie at exactly zero goes to the
inside), which guarantees every crossed cell edge has s_in <= 0 < s_out
and keeps the linear interpolation denominator nonzero.  Vertices are
deduplicated by their (node, axis) edge key, so shared cell faces stitch
into a watertight surface and every vertex lies on a grid-cell edge.
Output order is canonical: cells in C order, triangles in table order,
vertices sorted by edge key.
"""

from __future__ import annotations

import numpy as np

from relightkit.geometry._mc_tables import (CORNER_OFFSETS, EDGE_CORNERS,
                                            TRI_TABLE)
from relightkit.geometry.mesh import TriangleMesh
from relightkit.geometry.sdf import SdfGrid

# Corner pair and split axis for each of the 12 local edges, precomputed.
_EDGE_A = EDGE_CORNERS[:, 0]
_EDGE_B = EDGE_CORNERS[:, 1]
_EDGE_LOW = np.minimum(CORNER_OFFSETS[_EDGE_A], CORNER_OFFSETS[_EDGE_B])
_EDGE_AXIS = np.argmax(CORNER_OFFSETS[_EDGE_A] != CORNER_OFFSETS[_EDGE_B],
                       axis=1).astype(np.int64)


def _grad_at_nodes(values: np.ndarray, nodes: np.ndarray,
                   h: np.ndarray) -> np.ndarray:
    """Central-difference gradient at integer node coords (one-sided at
    the lattice border)."""
    shape = np.array(values.shape) - 1
    g = np.empty((len(nodes), 3))
    for a in range(3):
        up = nodes.copy()
        dn = nodes.copy()
        up[:, a] = np.minimum(nodes[:, a] + 1, shape[a])
        dn[:, a] = np.maximum(nodes[:, a] - 1, 0)
        span = (up[:, a] - dn[:, a]) * h[a]
        g[:, a] = (values[up[:, 0], up[:, 1], up[:, 2]]
                   - values[dn[:, 0], dn[:, 1], dn[:, 2]]) / span
    return g


def marching_cubes(grid: SdfGrid, albedo=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Extract the zero isosurface as a triangle mesh.

    Normals come from the interpolated central-difference SDF gradient
    and point toward positive s (outward).  All vertices receive the
    given constant albedo; reconstruction bakes real colors later.
    """
    V = grid.values
    nx, ny, nz = grid.resolution
    inside = (V <= 0.0).astype(np.uint8)

    case = np.zeros((nx, ny, nz), dtype=np.uint8)
    for c in range(8):
        ox, oy, oz = CORNER_OFFSETS[c]
        case |= inside[ox:ox + nx, oy:oy + ny, oz:oz + nz] << np.uint8(c)

    active = np.nonzero((case != 0) & (case != 255))
    if len(active[0]) == 0:
        empty3 = np.zeros((0, 3))
        return TriangleMesh(empty3, np.zeros((0, 3), dtype=np.int32),
                            empty3.copy(), empty3.copy())
    cells = np.stack(active, axis=1).astype(np.int64)     # (nc, 3)
    cell_case = case[active]
    cell_linear = (active[0] * ny + active[1]) * nz + active[2]

    # Group cells by case so triangle emission vectorizes per case.
    face_cell_parts, face_edge_parts, order_parts = [], [], []
    for c in np.unique(cell_case):
        ntri = int(TRI_TABLE[c, 15])
        if ntri == 0:
            continue
        rows = np.nonzero(cell_case == c)[0]
        tris = TRI_TABLE[c, :3 * ntri].astype(np.int64).reshape(ntri, 3)
        face_cell_parts.append(np.repeat(rows, ntri))
        face_edge_parts.append(np.tile(tris, (len(rows), 1)))
        order_parts.append(cell_linear[np.repeat(rows, ntri)] * 8
                           + np.tile(np.arange(ntri), len(rows)))
    face_cell = np.concatenate(face_cell_parts)
    face_edge = np.concatenate(face_edge_parts)           # (nf, 3) local edge
    emit_order = np.argsort(np.concatenate(order_parts), kind="stable")
    face_cell = face_cell[emit_order]
    face_edge = face_edge[emit_order]

    # Global edge key: lower endpoint node plus split axis.
    node = cells[face_cell][:, None, :] + _EDGE_LOW[face_edge]  # (nf, 3, 3)
    axis = _EDGE_AXIS[face_edge]                                # (nf, 3)
    key = (((node[..., 0] * (ny + 1) + node[..., 1]) * (nz + 1)
            + node[..., 2]) * 3 + axis)
    uniq, inv = np.unique(key.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3).astype(np.int32)
    # Table order winds clockwise seen from outside under the s <= 0
    # inside rule; swap to counter-clockwise so geometric and gradient
    # normals agree.
    faces = faces[:, [0, 2, 1]]

    # Decode unique keys back to node coordinates and interpolate.
    u_axis = uniq % 3
    lin = uniq // 3
    a_node = np.stack([lin // ((ny + 1) * (nz + 1)),
                       (lin // (nz + 1)) % (ny + 1),
                       lin % (nz + 1)], axis=1)
    b_node = a_node.copy()
    b_node[np.arange(len(uniq)), u_axis] += 1
    sa = V[a_node[:, 0], a_node[:, 1], a_node[:, 2]]
    sb = V[b_node[:, 0], b_node[:, 1], b_node[:, 2]]
    t = sa / (sa - sb)
    h = grid.cell_size
    pos = grid.bounds_min + a_node * h
    pos[np.arange(len(uniq)), u_axis] += t * h[u_axis]

    ga = _grad_at_nodes(V, a_node, h)
    gb = _grad_at_nodes(V, b_node, h)
    normal = ga * (1.0 - t)[:, None] + gb * t[:, None]
    length = np.linalg.norm(normal, axis=1, keepdims=True)
    degenerate = length[:, 0] < 1e-300
    normal = np.where(degenerate[:, None], [0.0, 0.0, 1.0],
                      normal / np.maximum(length, 1e-300))

    alb = np.tile(np.asarray(albedo, dtype=np.float64), (len(uniq), 1))
    return TriangleMesh(pos, faces, normal, alb)
