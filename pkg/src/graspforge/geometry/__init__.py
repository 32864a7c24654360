"""Mesh and point-cloud primitives: sampling, proximity queries, signed
distance, and pinhole camera projection."""

from .mesh import TriangleMesh, nearest_surface_point, sample_surface, signed_distance, signed_distances
from .pointset import OrientedPointSet, nearest_point
from .camera import CameraView, backproject, fibonacci_sphere_views, project

__all__ = [
    "TriangleMesh",
    "OrientedPointSet",
    "CameraView",
    "sample_surface",
    "nearest_surface_point",
    "nearest_point",
    "signed_distance",
    "signed_distances",
    "project",
    "backproject",
    "fibonacci_sphere_views",
]
