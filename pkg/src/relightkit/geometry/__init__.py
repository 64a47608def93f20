"""Triangle meshes, SDF grids, ray acceleration, and mesh processing."""

from relightkit.geometry.mesh import (
    TriangleMesh,
    Ray,
    validate_mesh,
    mesh_bounds,
    mesh_diameter,
    transform_mesh,
    merge_meshes,
    plane_mesh,
    box_mesh,
)
from relightkit.geometry.ply import load_ply, save_ply
from relightkit.geometry.bvh import Bvh, build_bvh
from relightkit.geometry.trace import Hit, intersect, occluded
from relightkit.geometry.sdf import SdfGrid, sample_sdf, sdf_gradient, eikonal_residual
from relightkit.geometry.marching_cubes import marching_cubes
from relightkit.geometry.decimate import decimate

__all__ = [
    "TriangleMesh", "Ray", "validate_mesh", "mesh_bounds", "mesh_diameter",
    "transform_mesh", "merge_meshes", "plane_mesh", "box_mesh",
    "load_ply", "save_ply",
    "Bvh", "build_bvh",
    "Hit", "intersect", "occluded",
    "SdfGrid", "sample_sdf", "sdf_gradient", "eikonal_residual",
    "marching_cubes",
    "decimate",
]
