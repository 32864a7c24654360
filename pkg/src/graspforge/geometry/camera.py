"""Pinhole camera views with depth rasters.

Extrinsics map world to camera (z forward, x right, y down). Pixel (u, v)
samples the raster at its nearest integer location; bilinear lookup is
deliberately avoided because it blends foreground and background depths at
silhouettes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..transforms import RigidTransform


@dataclass(frozen=True)
class CameraView:
    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    extrinsics: RigidTransform  # world -> camera
    width: int
    height: int
    depth: np.ndarray | None = None  # (H, W) float32 meters; 0 or NaN invalid

    @staticmethod
    def create(
        view_id: str,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        extrinsics: RigidTransform,
        width: int,
        height: int,
        depth: np.ndarray | None = None,
    ) -> "CameraView":
        problems = []
        if fx <= 0 or fy <= 0:
            problems.append("focal lengths must be positive")
        if not (0 <= cx < width) or not (0 <= cy < height):
            problems.append("principal point must lie inside the image")
        if depth is not None:
            depth = np.ascontiguousarray(depth, dtype=np.float32)
            if depth.shape != (height, width):
                problems.append(f"depth raster shape {depth.shape} does not match ({height}, {width})")
            else:
                finite = depth[np.isfinite(depth)]
                if len(finite) and finite.min() < 0:
                    problems.append("depth raster contains negative values")
                depth.setflags(write=False)
        if problems:
            raise ValidationError(problems)
        return CameraView(view_id, float(fx), float(fy), float(cx), float(cy),
                          extrinsics, int(width), int(height), depth)

    def camera_center(self) -> np.ndarray:
        return self.extrinsics.inverse().translation


def project(view: CameraView, world_point: np.ndarray) -> tuple[float, float, float] | None:
    """Project to pixel coordinates; returns (u, v, camera depth), or None for
    points at or behind the camera plane."""
    pc = view.extrinsics.apply(np.asarray(world_point, dtype=float))
    if pc[2] <= 0.0:
        return None
    return (
        float(view.fx * pc[0] / pc[2] + view.cx),
        float(view.fy * pc[1] / pc[2] + view.cy),
        float(pc[2]),
    )


def raster_depth_at(view: CameraView, u: float, v: float) -> float | None:
    """Depth raster value at the nearest pixel, or None when invalid/missing."""
    if view.depth is None:
        return None
    col = int(round(u))
    row = int(round(v))
    if not (0 <= col < view.width and 0 <= row < view.height):
        return None
    d = float(view.depth[row, col])
    if not np.isfinite(d) or d <= 0.0:
        return None
    return d


def backproject(
    view: CameraView, pixel: tuple[float, float], depth_override: float | None = None
) -> np.ndarray | None:
    """Lift a pixel to a world point using the raster depth at the nearest
    pixel (or the override). Returns None when the depth is invalid."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u < view.width and 0 <= v < view.height):
        raise IndexError(f"pixel ({u:.1f}, {v:.1f}) outside {view.width}x{view.height} image")
    d = depth_override if depth_override is not None else raster_depth_at(view, u, v)
    if d is None or not np.isfinite(d) or d <= 0.0:
        return None
    pc = np.array([(u - view.cx) / view.fx * d, (v - view.cy) / view.fy * d, d])
    return view.extrinsics.inverse().apply(pc)


def look_at(position: np.ndarray, target: np.ndarray, up_hint: np.ndarray | None = None) -> RigidTransform:
    """World-to-camera transform for a camera at `position` looking at `target`."""
    position = np.asarray(position, dtype=float)
    fwd = np.asarray(target, dtype=float) - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValidationError(["camera position coincides with its target"])
    z = fwd / n
    up = np.array([0.0, 0.0, 1.0]) if up_hint is None else np.asarray(up_hint, dtype=float)
    if abs(up @ z) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    cam_to_world = RigidTransform(np.column_stack([x, y, z]), position)
    return cam_to_world.inverse()


def fibonacci_sphere_views(
    count: int,
    radius: float,
    center: np.ndarray,
    width: int = 128,
    height: int = 128,
    focal: float | None = None,
    prefix: str = "view",
) -> list[CameraView]:
    """Near-uniform camera layout on a sphere around `center`, all looking
    inward. Deterministic; used to request renders from external tools."""
    center = np.asarray(center, dtype=float)
    if focal is None:
        focal = float(width)  # ~53 deg horizontal field of view
    golden = np.pi * (3.0 - np.sqrt(5.0))
    views = []
    for i in range(count):
        z = 1.0 - 2.0 * (i + 0.5) / count
        r = np.sqrt(max(0.0, 1.0 - z * z))
        th = golden * i
        pos = center + radius * np.array([r * np.cos(th), r * np.sin(th), z])
        views.append(
            CameraView.create(
                f"{prefix}_{i:03d}", focal, focal, (width - 1) / 2.0, (height - 1) / 2.0,
                look_at(pos, center), width, height,
            )
        )
    return views
