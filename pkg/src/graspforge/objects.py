"""Object models: a mesh plus dense surface samples with functional and
avoidance regions given as sample indices.

Loaded from a JSON sidecar next to the mesh:

    {
      "mesh_file": "sphere.obj",
      "scale": 1.0,
      "surface_samples": {"count": 4096, "seed": 0},
      "functional_regions": {"0": {"points": [[...]], "radius": 0.008}},
      "avoidance_regions": {"points": [[...]], "radius": 0.005}
    }

Region specs may list explicit points (snapped to the mesh and appended to
the surface sample set) and/or gather existing samples within `radius` of
them, or give raw sample "indices". The finger key "shared" applies to any
designated finger without its own region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry.io import load_mesh
from .geometry.mesh import TriangleMesh, nearest_surface_point, nearest_surface_points, sample_surface
from .geometry.pointset import OrientedPointSet

SHARED_REGION = -1


@dataclass(frozen=True)
class ObjectModel:
    object_id: str
    mesh: TriangleMesh
    surface: OrientedPointSet
    functional_regions: dict[int, np.ndarray] = field(default_factory=dict)  # finger -> indices
    avoidance_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    scale: float = 1.0

    def functional_points(self, finger: int) -> OrientedPointSet | None:
        idx = self.functional_regions.get(finger)
        if idx is None:
            idx = self.functional_regions.get(SHARED_REGION)
        if idx is None or len(idx) == 0:
            return None
        return self.surface.subset(idx)

    def avoidance_points(self) -> OrientedPointSet | None:
        if len(self.avoidance_indices) == 0:
            return None
        return self.surface.subset(self.avoidance_indices)

    def validate(self, check_on_mesh: bool = True) -> list[str]:
        problems = []
        if check_on_mesh:
            eps = self.mesh.discretization_eps
            _, _, d = nearest_surface_points(self.mesh, self.surface.points)
            if len(d) and d.max() > eps:
                problems.append(
                    f"{int((d > eps).sum())} surface sample(s) farther than eps={eps:.4g} m from the mesh"
                )
        n = len(self.surface)
        for f, idx in self.functional_regions.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                problems.append(f"functional region for finger {f} indexes outside the surface set")
        if len(self.avoidance_indices) and (
            self.avoidance_indices.min() < 0 or self.avoidance_indices.max() >= n
        ):
            problems.append("avoidance region indexes outside the surface set")
        return problems


def _region_indices(
    spec: dict,
    mesh: TriangleMesh,
    points: list[np.ndarray],
    normals: list[np.ndarray],
    base_count: int,
    existing: np.ndarray,
    where: str,
) -> np.ndarray:
    """Resolve one region spec into surface-sample indices, appending snapped
    explicit points to the sample set being built."""
    indices: list[int] = []
    if "indices" in spec:
        indices.extend(int(i) for i in spec["indices"])
    radius = float(spec.get("radius", 0.0))
    for p in spec.get("points", []):
        snapped, normal, _ = nearest_surface_point(mesh, np.asarray(p, dtype=float))
        idx = base_count + len(points)
        points.append(snapped)
        normals.append(normal)
        indices.append(idx)
        if radius > 0.0:
            d = np.linalg.norm(existing - snapped, axis=1)
            indices.extend(int(i) for i in np.where(d <= radius)[0])
    if not indices:
        raise ParseError(f"{where}: region resolves to no surface points")
    return np.unique(np.array(indices, dtype=int))


def load_object_model(sidecar: str | Path, object_id: str | None = None) -> ObjectModel:
    sidecar = Path(sidecar)
    try:
        doc = json.loads(sidecar.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{sidecar}: invalid JSON ({e})") from None
    if "mesh_file" not in doc:
        raise ParseError(f"{sidecar}: missing 'mesh_file'")
    mesh = load_mesh(sidecar.parent / doc["mesh_file"])
    scale = float(doc.get("scale", 1.0))
    if scale <= 0:
        raise ValidationError([f"{sidecar}: scale must be positive"])
    if scale != 1.0:
        mesh = TriangleMesh.create(mesh.vertices * scale, mesh.triangles, mesh.normals)

    ss = doc.get("surface_samples", {"count": 4096, "seed": 0})
    base = sample_surface(mesh, int(ss.get("count", 4096)), int(ss.get("seed", 0)))

    extra_pts: list[np.ndarray] = []
    extra_nrm: list[np.ndarray] = []
    functional: dict[int, np.ndarray] = {}
    for key, spec in doc.get("functional_regions", {}).items():
        finger = SHARED_REGION if key == "shared" else int(key)
        functional[finger] = _region_indices(
            spec, mesh, extra_pts, extra_nrm, len(base), base.points,
            f"{sidecar}: functional_regions['{key}']",
        )
    avoidance = np.zeros(0, dtype=int)
    if "avoidance_regions" in doc:
        avoidance = _region_indices(
            doc["avoidance_regions"], mesh, extra_pts, extra_nrm, len(base), base.points,
            f"{sidecar}: avoidance_regions",
        )

    if extra_pts:
        surface = OrientedPointSet.create(
            np.vstack([base.points, np.array(extra_pts)]),
            np.vstack([base.normals, np.array(extra_nrm)]),
        )
    else:
        surface = base

    model = ObjectModel(
        object_id=object_id or sidecar.stem,
        mesh=mesh,
        surface=surface,
        functional_regions=functional,
        avoidance_indices=avoidance,
        scale=scale,
    )
    # sampled and snapped points are on the mesh by construction; only
    # index-range invariants need a run-time check here
    problems = model.validate(check_on_mesh=False)
    if problems:
        raise ValidationError(problems)
    return model
