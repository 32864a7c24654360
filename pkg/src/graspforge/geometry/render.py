"""Minimal z-buffer depth rasterizer.

Production depth comes from external renderers; this exists so fixtures and
tests can manufacture consistent depth rasters for the camera formats the
pipeline consumes. Perspective-correct depth, pixel centers at integer
coordinates, matching the nearest-pixel lookup convention.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraView
from .mesh import TriangleMesh


def render_depth(mesh: TriangleMesh, view: CameraView, near: float = 1e-4) -> np.ndarray:
    """Depth raster (H, W) float32; pixels with no surface hit are 0."""
    buf = np.zeros((view.height, view.width), dtype=np.float64)
    cam = view.extrinsics.apply(mesh.vertices)  # (V, 3)
    z = cam[:, 2]
    u = view.fx * cam[:, 0] / np.where(z > near, z, 1.0) + view.cx
    v = view.fy * cam[:, 1] / np.where(z > near, z, 1.0) + view.cy
    inv_z = 1.0 / np.where(z > near, z, 1.0)

    for tri in mesh.triangles:
        if np.any(z[tri] <= near):
            continue  # clipping not needed for outside-in object views
        us, vs, ws = u[tri], v[tri], inv_z[tri]
        lo_u = max(int(np.ceil(us.min())), 0)
        hi_u = min(int(np.floor(us.max())), view.width - 1)
        lo_v = max(int(np.ceil(vs.min())), 0)
        hi_v = min(int(np.floor(vs.max())), view.height - 1)
        if lo_u > hi_u or lo_v > hi_v:
            continue
        gu, gv = np.meshgrid(np.arange(lo_u, hi_u + 1), np.arange(lo_v, hi_v + 1))
        # barycentric coordinates via the signed-area edge functions
        d = (vs[1] - vs[2]) * (us[0] - us[2]) + (us[2] - us[1]) * (vs[0] - vs[2])
        if abs(d) < 1e-12:
            continue
        w0 = ((vs[1] - vs[2]) * (gu - us[2]) + (us[2] - us[1]) * (gv - vs[2])) / d
        w1 = ((vs[2] - vs[0]) * (gu - us[2]) + (us[0] - us[2]) * (gv - vs[2])) / d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        iz = w0 * ws[0] + w1 * ws[1] + w2 * ws[2]
        depth = np.where(inside & (iz > 0), 1.0 / np.maximum(iz, 1e-12), np.inf)
        rows, cols = gv[inside], gu[inside]
        vals = depth[inside]
        cur = buf[rows, cols]
        closer = (cur == 0) | (vals < cur)
        buf[rows[closer], cols[closer]] = vals[closer]
    return buf.astype(np.float32)
