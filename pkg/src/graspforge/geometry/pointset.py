"""Oriented point sets with exact nearest-neighbor queries.

A k-d tree accelerates lookups; ties on distance are broken toward the
lowest point index so results never depend on tree internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ValidationError


@dataclass(frozen=True)
class OrientedPointSet:
    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3) unit
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def create(
        points: np.ndarray,
        normals: np.ndarray,
        attributes: dict[str, np.ndarray] | None = None,
    ) -> "OrientedPointSet":
        points = np.ascontiguousarray(points, dtype=float)
        normals = np.ascontiguousarray(normals, dtype=float)
        problems = []
        if points.ndim != 2 or points.shape[1] != 3:
            problems.append("points must be (N, 3)")
        if normals.shape != points.shape:
            problems.append("normals must match points in shape")
        elif len(normals) and np.abs(np.linalg.norm(normals, axis=1) - 1.0).max() > 1e-9:
            problems.append("normals are not unit length")
        attributes = dict(attributes or {})
        for k, v in attributes.items():
            v = np.asarray(v)
            if len(v) != len(points):
                problems.append(f"attribute '{k}' length {len(v)} does not match point count")
            attributes[k] = v
        if problems:
            raise ValidationError(problems)
        points.setflags(write=False)
        normals.setflags(write=False)
        return OrientedPointSet(points, normals, attributes)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.points)

    def subset(self, indices: np.ndarray) -> "OrientedPointSet":
        idx = np.asarray(indices, dtype=int)
        return OrientedPointSet.create(
            self.points[idx], self.normals[idx], {k: v[idx] for k, v in self.attributes.items()}
        )


def nearest_point(point_set: OrientedPointSet, query: np.ndarray) -> tuple[int, float]:
    """Index and distance of the nearest point; exact ties go to the lowest index."""
    if len(point_set) == 0:
        raise ValidationError(["point set is empty"])
    q = np.asarray(query, dtype=float)
    dist, idx = point_set._tree.query(q)
    ties = point_set._tree.query_ball_point(q, dist)
    if ties:
        exact = [i for i in ties if np.linalg.norm(point_set.points[i] - q) == dist]
        if exact:
            idx = min(exact)
    return int(idx), float(dist)


def nearest_points(point_set: OrientedPointSet, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch nearest query: (indices, distances). Ties resolved to lowest index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    k = min(2, len(point_set))
    dist, idx = point_set._tree.query(queries, k=k)
    if k == 1:
        return np.atleast_1d(idx).astype(int), np.atleast_1d(dist)
    tied = dist[:, 0] == dist[:, 1]
    out_idx = idx[:, 0].copy()
    for i in np.where(tied)[0]:
        out_idx[i] = nearest_point(point_set, queries[i])[0]
    return out_idx.astype(int), dist[:, 0]
