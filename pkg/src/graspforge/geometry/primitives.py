"""Procedural test/fixture meshes: watertight UV spheres and boxes."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def uv_sphere(radius: float, center=(0.0, 0.0, 0.0), segments: int = 32, rings: int = 16) -> TriangleMesh:
    """Watertight lat-long sphere with triangle fans at the poles."""
    center = np.asarray(center, dtype=float)
    verts = [center + [0.0, 0.0, radius]]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            th = 2.0 * np.pi * s / segments
            verts.append(center + radius * np.array(
                [np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)]
            ))
    verts.append(center + [0.0, 0.0, -radius])
    south = len(verts) - 1

    def ring_vertex(r: int, s: int) -> int:
        return 1 + (r - 1) * segments + (s % segments)

    tris = []
    for s in range(segments):
        tris.append([0, ring_vertex(1, s), ring_vertex(1, s + 1)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = ring_vertex(r, s), ring_vertex(r, s + 1)
            c, d = ring_vertex(r + 1, s), ring_vertex(r + 1, s + 1)
            tris.append([a, c, b])
            tris.append([b, c, d])
    for s in range(segments):
        tris.append([south, ring_vertex(rings - 1, s + 1), ring_vertex(rings - 1, s)])
    return TriangleMesh.create(np.array(verts), np.array(tris, dtype=np.int64))


def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned watertight box given full extents."""
    e = 0.5 * np.asarray(extents, dtype=float)
    c = np.asarray(center, dtype=float)
    verts = np.array([[x, y, z] for x in (-e[0], e[0]) for y in (-e[1], e[1]) for z in (-e[2], e[2])]) + c
    quads = [
        ([0, 1, 3, 2], "x-"), ([4, 6, 7, 5], "x+"),
        ([0, 4, 5, 1], "y-"), ([2, 3, 7, 6], "y+"),
        ([0, 2, 6, 4], "z-"), ([1, 5, 7, 3], "z+"),
    ]
    tris = []
    for (a, b, cc, d), _ in quads:
        tris.append([a, b, cc])
        tris.append([a, cc, d])
    return TriangleMesh.create(verts, np.array(tris, dtype=np.int64))
