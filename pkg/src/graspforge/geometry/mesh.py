"""Triangle meshes with an AABB tree for nearest-surface queries and a
generalized-winding-number inside test for signed distance.

The discretization tolerance of a mesh is defined as 2x its maximum edge
length; analytic-geometry tests quote their error bounds against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import ValidationError

_DEGENERATE_AREA = 1e-12


def closest_point_on_triangle(a: np.ndarray, b: np.ndarray, c: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Closest point to p on triangle (a, b, c). Ericson, Real-Time Collision
    Detection, 5.1.5."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@dataclass
class _AabbTree:
    """Flat AABB tree over triangles, median split on the longest axis."""

    lo: np.ndarray  # (nodes, 3)
    hi: np.ndarray  # (nodes, 3)
    left: np.ndarray  # child index or -1
    right: np.ndarray
    start: np.ndarray  # leaf triangle range [start, end)
    end: np.ndarray
    order: np.ndarray  # permutation of triangle indices

    LEAF_SIZE = 8

    @staticmethod
    def build(tri_lo: np.ndarray, tri_hi: np.ndarray) -> "_AabbTree":
        n = len(tri_lo)
        centers = 0.5 * (tri_lo + tri_hi)
        order = np.arange(n)
        lo, hi, left, right, start, end = [], [], [], [], [], []

        def make_node(s: int, e: int) -> int:
            idx = len(lo)
            lo.append(tri_lo[order[s:e]].min(axis=0))
            hi.append(tri_hi[order[s:e]].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            end.append(e)
            return idx

        stack = [make_node(0, n)]
        while stack:
            node = stack.pop()
            s, e = start[node], end[node]
            if e - s <= _AabbTree.LEAF_SIZE:
                continue
            axis = int(np.argmax(hi[node] - lo[node]))
            seg = order[s:e]
            mid = (e - s) // 2
            part = np.argpartition(centers[seg, axis], mid)
            order[s:e] = seg[part]
            left[node] = make_node(s, s + mid)
            right[node] = make_node(s + mid, e)
            start[node] = end[node] = -1
            stack.extend((left[node], right[node]))

        tree = _AabbTree(
            np.array(lo), np.array(hi), np.array(left), np.array(right),
            np.array(start), np.array(end), order,
        )
        # plain-Python mirrors: traversal is hot and numpy scalar math is slow
        tree.lo_list = tree.lo.tolist()
        tree.hi_list = tree.hi.tolist()
        tree.left_list = tree.left.tolist()
        tree.right_list = tree.right.tolist()
        tree.start_list = tree.start.tolist()
        tree.end_list = tree.end.tolist()
        tree.order_list = tree.order.tolist()
        return tree

    def box_distance_sq(self, node: int, p) -> float:
        lo = self.lo_list[node]
        hi = self.hi_list[node]
        d0 = (lo[0] - p[0]) if p[0] < lo[0] else (p[0] - hi[0] if p[0] > hi[0] else 0.0)
        d1 = (lo[1] - p[1]) if p[1] < lo[1] else (p[1] - hi[1] if p[1] > hi[1] else 0.0)
        d2 = (lo[2] - p[2]) if p[2] < lo[2] else (p[2] - hi[2] if p[2] > hi[2] else 0.0)
        return d0 * d0 + d1 * d1 + d2 * d2


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangulated surface. Vertices in meters."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    normals: np.ndarray  # (T, 3) outward unit

    @staticmethod
    def create(vertices: np.ndarray, triangles: np.ndarray, normals: np.ndarray | None = None) -> "TriangleMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        problems: list[str] = []
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValidationError(["vertices must be (V, 3)"])
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValidationError(["triangles must be (T, 3)"])
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            problems.append("triangle indices out of vertex range")
        if not problems:
            v0, v1, v2 = (vertices[triangles[:, i]] for i in range(3))
            cross = np.cross(v1 - v0, v2 - v0)
            areas = 0.5 * np.linalg.norm(cross, axis=1)
            bad = np.where(areas <= _DEGENERATE_AREA)[0]
            if len(bad):
                problems.append(f"{len(bad)} degenerate triangle(s), first at index {int(bad[0])}")
            if normals is None and not len(bad):
                normals = cross / (2.0 * areas)[:, None]
        if normals is not None:
            normals = np.ascontiguousarray(normals, dtype=float)
            if normals.shape != triangles.shape:
                problems.append("normals must be one unit 3-vector per triangle")
            elif len(normals) and np.abs(np.linalg.norm(normals, axis=1) - 1.0).max() > 1e-9:
                problems.append("triangle normals are not unit length")
        if problems:
            raise ValidationError(problems)
        for arr in (vertices, triangles, normals):
            arr.setflags(write=False)
        return TriangleMesh(vertices, triangles, normals)

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        v0, v1, v2 = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    @cached_property
    def max_edge_length(self) -> float:
        v0, v1, v2 = (self.vertices[self.triangles[:, i]] for i in range(3))
        e = np.stack([v1 - v0, v2 - v1, v0 - v2])
        return float(np.linalg.norm(e, axis=2).max())

    @property
    def discretization_eps(self) -> float:
        """Geometric tolerance for comparisons against analytic surfaces."""
        return 2.0 * self.max_edge_length

    @cached_property
    def is_watertight(self) -> bool:
        """Closed, consistently oriented, edge-manifold: every directed edge
        appears exactly once and so does its reverse."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        fwd = {tuple(e) for e in directed.tolist()}
        if len(fwd) != len(directed):
            return False
        return all((b, a) in fwd for a, b in fwd)

    def require_watertight(self) -> None:
        if not self.is_watertight:
            raise ValidationError(["mesh is not watertight (edge-manifold test failed)"])

    @cached_property
    def _tree(self) -> _AabbTree:
        corners = self.vertices[self.triangles]  # (T, 3, 3)
        return _AabbTree.build(corners.min(axis=1), corners.max(axis=1))

    @cached_property
    def _corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def __len__(self) -> int:
        return len(self.triangles)


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> "OrientedPointSet":
    """Area-weighted uniform surface samples, deterministic per seed.

    Triangles are put in a canonical coordinate order first, so the result
    does not depend on the order triangles were listed in.
    """
    from .pointset import OrientedPointSet

    if count < 1:
        raise ValidationError(["sample count must be >= 1"])
    if len(mesh) == 0:
        raise ValidationError(["cannot sample an empty mesh"])
    flat = mesh._corners.reshape(len(mesh), 9)
    canon = np.lexsort(flat.T[::-1])
    areas = mesh.triangle_areas[canon]
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(mesh), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    corners = mesh._corners[canon[tri]]
    pts = (
        (1.0 - r1)[:, None] * corners[:, 0]
        + (r1 * (1.0 - r2))[:, None] * corners[:, 1]
        + (r1 * r2)[:, None] * corners[:, 2]
    )
    nrm = mesh.normals[canon[tri]]
    return OrientedPointSet.create(pts, nrm, {"triangle": canon[tri].astype(float)})


def nearest_surface_point(mesh: TriangleMesh, query: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Closest point on the mesh surface: (point, triangle normal, distance)."""
    if len(mesh) == 0:
        raise ValidationError(["mesh has no triangles"])
    q = np.asarray(query, dtype=float)
    qt = (float(q[0]), float(q[1]), float(q[2]))
    tree = mesh._tree
    corners = mesh._corners
    best_d2 = np.inf
    best_pt = corners[0, 0]
    best_tri = 0
    stack = [0]
    left = tree.left_list
    start = tree.start_list
    end = tree.end_list
    order = tree.order_list
    while stack:
        node = stack.pop()
        if tree.box_distance_sq(node, qt) >= best_d2:
            continue
        if left[node] < 0:
            for ti in order[start[node]:end[node]]:
                tri = corners[ti]
                cp = closest_point_on_triangle(tri[0], tri[1], tri[2], q)
                d2 = float((q - cp) @ (q - cp))
                if d2 < best_d2:
                    best_d2, best_pt, best_tri = d2, cp, ti
        else:
            l, r = left[node], tree.right_list[node]
            dl = tree.box_distance_sq(l, qt)
            dr = tree.box_distance_sq(r, qt)
            # push the farther child first so the nearer is explored first
            if dl <= dr:
                stack.extend((r, l))
            else:
                stack.extend((l, r))
    return best_pt, mesh.normals[best_tri], float(np.sqrt(best_d2))


def nearest_surface_points(mesh: TriangleMesh, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch nearest-surface query via the tree."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    pts = np.empty_like(queries)
    nrm = np.empty_like(queries)
    dist = np.empty(len(queries))
    for i, q in enumerate(queries):
        pts[i], nrm[i], dist[i] = nearest_surface_point(mesh, q)
    return pts, nrm, dist


def winding_numbers(mesh: TriangleMesh, queries: np.ndarray) -> np.ndarray:
    """Generalized winding number of each query point (1 deep inside a closed
    surface, 0 outside). Sum of signed solid angles, van Oosterom-Strackee."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    corners = mesh._corners  # (T, 3, 3)
    total = np.zeros(len(queries))
    # chunk queries so the (Q, T, 3) temporaries stay small
    chunk = max(1, int(4e6 / max(len(mesh), 1)))
    for s in range(0, len(queries), chunk):
        q = queries[s:s + chunk]
        a = corners[None, :, 0, :] - q[:, None, :]
        b = corners[None, :, 1, :] - q[:, None, :]
        c = corners[None, :, 2, :] - q[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("qti,qti->qt", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("qti,qti->qt", a, b) * lc
            + np.einsum("qti,qti->qt", b, c) * la
            + np.einsum("qti,qti->qt", c, a) * lb
        )
        total[s:s + chunk] = np.arctan2(num, den).sum(axis=1) / (2.0 * np.pi)
    return total


def signed_distances(mesh: TriangleMesh, queries: np.ndarray) -> np.ndarray:
    """Signed distance to a watertight surface, negative inside."""
    mesh.require_watertight()
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    _, _, dist = nearest_surface_points(mesh, queries)
    inside = winding_numbers(mesh, queries) > 0.5
    dist[inside] *= -1.0
    return dist


def signed_distance(mesh: TriangleMesh, query: np.ndarray) -> float:
    return float(signed_distances(mesh, np.asarray(query, dtype=float)[None, :])[0])


class SignedDistanceTracker:
    """Amortized signed-distance queries for a point set that moves a little
    between calls (e.g. collision spheres during optimization).

    Signed distance is 1-Lipschitz, so a point that moved less than its last
    |signed distance| cannot have crossed the surface, and a point whose
    cached clearance exceeds the requested threshold plus its motion cannot
    be within the threshold now. Shortcuts are exact, never approximate.
    """

    def __init__(self, mesh: TriangleMesh):
        mesh.require_watertight()
        self.mesh = mesh
        self._anchor: np.ndarray | None = None
        self._sd: np.ndarray | None = None

    def query(self, points: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed distances and gradients; entries certified to satisfy
        sd >= threshold may return the certified lower bound with a zero
        gradient (their max(0, threshold - sd) response is identically 0)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        thresholds = np.asarray(thresholds, dtype=float)
        n = len(points)
        sd = np.empty(n)
        grads = np.zeros_like(points)
        have_cache = self._anchor is not None and len(self._anchor) == n
        if have_cache:
            moved = np.linalg.norm(points - self._anchor, axis=1)
            bound = self._sd - moved  # 1-Lipschitz lower bound at the new points
            certified = bound >= thresholds
            sd[certified] = bound[certified]
            need = np.where(~certified)[0]
        else:
            need = np.arange(n)
            self._anchor = points.copy()
            self._sd = np.full(n, np.nan)
        if len(need):
            sub = points[need]
            pts, nrm, dist = nearest_surface_points(self.mesh, sub)
            dirs = np.where(
                dist[:, None] > 1e-12, (sub - pts) / np.maximum(dist[:, None], 1e-300), nrm
            )
            sign = np.empty(len(need))
            if have_cache:
                moved_n = np.linalg.norm(sub - self._anchor[need], axis=1)
                cached = self._sd[need]
                keep = np.isfinite(cached) & (moved_n < np.abs(cached))
            else:
                keep = np.zeros(len(need), dtype=bool)
            if keep.any():
                sign[keep] = np.sign(self._sd[need][keep])
            fresh = ~keep
            if fresh.any():
                inside = winding_numbers(self.mesh, sub[fresh]) > 0.5
                sign[fresh] = np.where(inside, -1.0, 1.0)
            sd[need] = sign * dist
            grads[need] = dirs * sign[:, None]
            self._anchor[need] = sub
            self._sd[need] = sd[need]
        return sd, grads


def signed_distances_with_gradient(mesh: TriangleMesh, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed distances plus their spatial gradients (unit vectors pointing
    along increasing signed distance). On the surface itself the gradient
    falls back to the nearest triangle's outward normal."""
    mesh.require_watertight()
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    pts = np.empty_like(queries)
    grads = np.empty_like(queries)
    dist = np.empty(len(queries))
    for i, q in enumerate(queries):
        p, n, d = nearest_surface_point(mesh, q)
        pts[i] = p
        dist[i] = d
        if d < 1e-12:
            grads[i] = n
        else:
            grads[i] = (q - p) / d
    inside = winding_numbers(mesh, queries) > 0.5
    dist[inside] *= -1.0
    grads[inside] *= -1.0
    return dist, grads
