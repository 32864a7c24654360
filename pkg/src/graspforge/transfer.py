"""Demonstration contact transfer onto novel objects.

Stages: scale alignment of the demo cloud to the demo fingertips, fingertip
contact extraction, per-view correspondence lookup with multi-view
back-projection, and density-based aggregation into at most three
confidence-weighted candidates per finger. 2D correspondences are consumed
from files produced by an external matcher, never computed here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError, ValidationError
from .geometry.camera import CameraView, backproject, project, raster_depth_at
from .geometry.mesh import TriangleMesh, nearest_surface_point
from .geometry.pointset import OrientedPointSet, nearest_point, nearest_points

log = logging.getLogger(__name__)

NON_CONTACT_THRESHOLD = 0.02  # fingertips farther than this are not grasping
DEMO_CONTACT_TOLERANCE = 0.005  # stored contacts must lie on the demo cloud
DEFAULT_SNAP_RADIUS_PX = 4.0
DEFAULT_VISIBILITY_DEPTH_TOL = 0.01
DEFAULT_CLUSTER_EPS = 0.015
DEFAULT_CLUSTER_MIN_PTS = 4
MAX_CANDIDATES_PER_FINGER = 3


@dataclass(frozen=True)
class DemoContacts:
    """Fingertip contacts extracted from a demonstration, in the (scaled)
    demo-object frame."""

    contacts: dict[int, np.ndarray]  # finger -> contact point on the demo cloud
    cloud: OrientedPointSet
    fingertips: dict[int, np.ndarray]
    scale: float = 1.0

    @property
    def fingers(self) -> tuple[int, ...]:
        return tuple(sorted(self.contacts))

    def validate(self) -> None:
        problems = []
        for f, c in self.contacts.items():
            _, d = nearest_point(self.cloud, c)
            if d > DEMO_CONTACT_TOLERANCE:
                problems.append(
                    f"finger {f} contact is {d * 1000:.1f} mm from the demo cloud "
                    f"(limit {DEMO_CONTACT_TOLERANCE * 1000:.0f} mm)"
                )
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class CorrespondenceSet:
    """2D matches between one demo frame and one render frame."""

    src_view: str
    dst_view: str
    matches: np.ndarray  # (M, 5): u1 v1 u2 v2 confidence

    def validate(self, src: CameraView | None = None, dst: CameraView | None = None) -> None:
        problems = []
        m = self.matches
        if m.ndim != 2 or m.shape[1] != 5:
            raise ValidationError(["matches must be (M, 5) rows of u1 v1 u2 v2 conf"])
        if len(m) and (m[:, 4].min() < 0 or m[:, 4].max() > 1):
            problems.append("confidence values must lie in [0, 1]")
        if src is not None and len(m):
            if m[:, 0].min() < 0 or m[:, 0].max() >= src.width or m[:, 1].min() < 0 or m[:, 1].max() >= src.height:
                problems.append(f"source pixels exceed {src.width}x{src.height} bounds")
        if dst is not None and len(m):
            if m[:, 2].min() < 0 or m[:, 2].max() >= dst.width or m[:, 3].min() < 0 or m[:, 3].max() >= dst.height:
                problems.append(f"target pixels exceed {dst.width}x{dst.height} bounds")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class Candidate:
    point: np.ndarray
    normal: np.ndarray
    weight: float
    members: int


@dataclass(frozen=True)
class ContactCandidateSet:
    """Up to three snapped, confidence-weighted contact hypotheses per finger."""

    per_finger: dict[int, tuple[Candidate, ...]]

    @property
    def fingers(self) -> tuple[int, ...]:
        return tuple(sorted(self.per_finger))

    def weighted_centroid(self) -> np.ndarray:
        pts = np.array([c.point for cands in self.per_finger.values() for c in cands])
        w = np.array([c.weight for cands in self.per_finger.values() for c in cands])
        if w.sum() <= 0:
            return pts.mean(axis=0)
        return (pts * w[:, None]).sum(axis=0) / w.sum()

    def mean_normal(self) -> np.ndarray:
        n = np.array([c.normal for cands in self.per_finger.values() for c in cands]).mean(axis=0)
        norm = np.linalg.norm(n)
        return n / norm if norm > 1e-6 else np.zeros(3)


@dataclass
class AlignResult:
    scale: float
    nearest_distances: np.ndarray  # per fingertip, at the final scale
    objective_trace: list[float] = field(default_factory=list)


def align_scale(fingertips: np.ndarray, object_points: OrientedPointSet, max_rounds: int = 50) -> AlignResult:
    """Find the scale s minimizing sum ||s*o_i - h_i||^2 where o_i is each
    fingertip's nearest object point at the current scale.

    Alternates nearest-neighbor assignment with the closed-form minimizer
    s = sum(<o_i, h_i>) / sum(||o_i||^2); the objective never increases.
    """
    h = np.atleast_2d(np.asarray(fingertips, dtype=float))
    if len(h) < 1:
        raise ValidationError(["need at least one fingertip"])
    if len(object_points) < 1:
        raise ValidationError(["object point set is empty"])

    s = 1.0
    assign = None
    trace: list[float] = []
    for _ in range(max_rounds):
        # nearest object point at scale s == nearest cloud point to h / s
        idx, _ = nearest_points(object_points, h / s)
        o = object_points.points[idx]
        denom = float(np.sum(o * o))
        if denom <= 0.0:
            raise ValidationError(["object points are all zero; scale is undefined"])
        s = float(np.sum(o * h) / denom)
        if s <= 0.0:
            raise ValidationError([f"scale alignment produced non-positive scale {s:.3g}"])
        trace.append(float(np.sum((s * o - h) ** 2)))
        if assign is not None and np.array_equal(idx, assign):
            break
        assign = idx
    dists = np.linalg.norm(s * object_points.points[assign] - h, axis=1)
    return AlignResult(s, dists, trace)


def extract_demo_contacts(
    fingertips: dict[int, np.ndarray],
    cloud: OrientedPointSet,
    scale: float = 1.0,
    non_contact_threshold: float = NON_CONTACT_THRESHOLD,
) -> DemoContacts:
    """Nearest cloud point per fingertip; fingers farther than the threshold
    are flagged non-contacting and dropped from the transfer set."""
    if len(cloud) == 0:
        raise ValidationError(["demo object cloud is empty"])
    contacts: dict[int, np.ndarray] = {}
    for f in sorted(fingertips):
        idx, dist = nearest_point(cloud, np.asarray(fingertips[f], dtype=float))
        if dist > non_contact_threshold:
            log.warning(
                "finger %d is %.1f mm from the demo object; flagged non-contacting",
                f, dist * 1000,
            )
            continue
        contacts[f] = cloud.points[idx].copy()
    return DemoContacts(contacts, cloud, {f: np.asarray(p, dtype=float) for f, p in fingertips.items()}, scale)


@dataclass(frozen=True)
class TransferCloud:
    points: np.ndarray  # (P, 3)
    confidences: np.ndarray  # (P,)


def transfer_via_correspondences(
    demo: DemoContacts,
    demo_views: dict[str, CameraView],
    render_views: dict[str, CameraView],
    correspondences: list[CorrespondenceSet],
    snap_radius_px: float = DEFAULT_SNAP_RADIUS_PX,
    visibility_depth_tol: float = DEFAULT_VISIBILITY_DEPTH_TOL,
) -> dict[int, TransferCloud]:
    """Carry each demo contact through every valid demo frame into 3D points
    on the novel object.

    A demo frame is valid for a contact when the projection lands in bounds
    with valid raster depth and the projected depth agrees with the raster
    within the visibility tolerance (nearer surfaces occlude the contact).
    The correspondence whose source pixel is nearest to the projection (and
    within the snap radius) selects the target pixel to back-project.
    """
    for cs in correspondences:
        if cs.src_view not in demo_views:
            raise ValidationError([f"correspondence references unknown demo view '{cs.src_view}'"])
        if cs.dst_view not in render_views:
            raise ValidationError([f"correspondence references unknown render view '{cs.dst_view}'"])

    by_src: dict[str, list[CorrespondenceSet]] = {}
    for cs in correspondences:
        by_src.setdefault(cs.src_view, []).append(cs)
    trees = {id(cs): cKDTree(cs.matches[:, 0:2]) for cs in correspondences if len(cs.matches)}

    out: dict[int, TransferCloud] = {}
    for f in demo.fingers:
        contact = demo.contacts[f]
        pts: list[np.ndarray] = []
        confs: list[float] = []
        for view_id in sorted(demo_views):
            view = demo_views[view_id]
            proj = project(view, contact)
            if proj is None:
                continue
            u, v, z = proj
            if not (0 <= u < view.width and 0 <= v < view.height):
                continue
            raster = raster_depth_at(view, u, v)
            if raster is None or abs(z - raster) >= visibility_depth_tol:
                continue
            for cs in by_src.get(view_id, []):
                if len(cs.matches) == 0:
                    continue
                d, j = trees[id(cs)].query([u, v])
                if d > snap_radius_px:
                    continue
                row = cs.matches[j]
                target = render_views[cs.dst_view]
                tu, tv = float(row[2]), float(row[3])
                if not (0 <= tu < target.width and 0 <= tv < target.height):
                    continue
                p3 = backproject(target, (tu, tv))
                if p3 is None:
                    continue
                pts.append(p3)
                confs.append(float(row[4]))
        if not pts:
            log.warning("finger %d accumulated no transferred points", f)
            out[f] = TransferCloud(np.zeros((0, 3)), np.zeros(0))
        else:
            out[f] = TransferCloud(np.array(pts), np.array(confs))
    return out


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering. Returns one label per point, -1 for noise.

    A point is core when it has at least min_pts neighbors within eps
    (inclusive, counting itself). Clusters are the connected components of
    core points; border points join the cluster of their lowest-index core
    neighbor. Cluster ids are numbered by each cluster's smallest core index,
    so labels are independent of any traversal order.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if eps <= 0:
        raise ValidationError(["eps must be positive"])
    if min_pts < 1:
        raise ValidationError(["min_pts must be >= 1"])
    if n == 0:
        return np.zeros(0, dtype=int)

    tree = cKDTree(points)
    neighbors = tree.query_ball_point(points, eps)  # inclusive, self-counting
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in np.where(core)[0]:
        for j in neighbors[i]:
            if core[j]:
                ri, rj = find(int(i)), find(int(j))
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    labels = np.full(n, -1, dtype=int)
    roots = sorted({find(int(i)) for i in np.where(core)[0]})
    root_label = {r: k for k, r in enumerate(roots)}
    for i in np.where(core)[0]:
        labels[i] = root_label[find(int(i))]
    for i in np.where(~core)[0]:
        core_nb = [j for j in neighbors[i] if core[j]]
        if core_nb:
            labels[i] = labels[min(core_nb)]
    return labels


def aggregate_candidates(
    clouds: dict[int, TransferCloud],
    mesh: TriangleMesh,
    eps: float = DEFAULT_CLUSTER_EPS,
    min_pts: int = DEFAULT_CLUSTER_MIN_PTS,
) -> ContactCandidateSet:
    """Cluster each finger's transferred points and keep the three largest
    clusters as candidates: confidence-weighted centroid snapped to the
    object surface, weighted by mean member confidence."""
    per_finger: dict[int, tuple[Candidate, ...]] = {}
    for f in sorted(clouds):
        cloud = clouds[f]
        if len(cloud.points) == 0:
            log.warning("finger %d has no transferred points; dropped", f)
            continue
        labels = dbscan(cloud.points, eps, min_pts)
        ids = sorted(set(labels) - {-1})
        if not ids:
            log.warning("finger %d: all transferred points are noise; dropped", f)
            continue
        stats = []
        for cid in ids:
            member_idx = np.where(labels == cid)[0]
            mean_conf = float(cloud.confidences[member_idx].mean())
            stats.append((-len(member_idx), -mean_conf, int(member_idx.min()), cid, member_idx))
        stats.sort(key=lambda s: s[:3])
        cands = []
        for _, _, _, cid, member_idx in stats[:MAX_CANDIDATES_PER_FINGER]:
            w = cloud.confidences[member_idx]
            pts = cloud.points[member_idx]
            centroid = (
                (pts * w[:, None]).sum(axis=0) / w.sum() if w.sum() > 0 else pts.mean(axis=0)
            )
            snapped, normal, _ = nearest_surface_point(mesh, centroid)
            cands.append(Candidate(snapped, normal, float(w.mean()), len(member_idx)))
        per_finger[f] = tuple(cands)
    return ContactCandidateSet(per_finger)


# ---------------------------------------------------------------------------
# file formats

def load_correspondences(path: str | Path) -> list[CorrespondenceSet]:
    """JSON lines, one record per view pair:
    {"src_view": ..., "dst_view": ..., "matches": [[u1,v1,u2,v2,conf], ...]}"""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            cs = CorrespondenceSet(
                str(rec["src_view"]), str(rec["dst_view"]),
                np.asarray(rec["matches"], dtype=float).reshape(-1, 5),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}:{lineno}: bad correspondence record ({e})") from None
        cs.validate()
        out.append(cs)
    return out


def save_correspondences(path: str | Path, sets: list[CorrespondenceSet]) -> None:
    lines = [
        json.dumps(
            {"src_view": cs.src_view, "dst_view": cs.dst_view,
             "matches": np.asarray(cs.matches, dtype=float).tolist()},
            sort_keys=True,
        )
        for cs in sets
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_demo_contacts(path: str | Path) -> DemoContacts:
    """JSON document with per-finger contacts/fingertips and a PLY cloud
    reference resolved relative to the document."""
    path = Path(path)
    from .geometry.io import load_point_cloud

    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from None
    for key in ("cloud_file", "fingertips"):
        if key not in doc:
            raise ParseError(f"{path}: missing '{key}'")
    cloud = load_point_cloud(path.parent / doc["cloud_file"])
    scale = float(doc.get("scale", 1.0))
    fingertips = {int(f): np.asarray(p, dtype=float) for f, p in doc["fingertips"].items()}
    if "contacts" in doc:
        contacts = {int(f): np.asarray(p, dtype=float) for f, p in doc["contacts"].items()}
        demo = DemoContacts(contacts, cloud, fingertips, scale)
        demo.validate()
        return demo
    return extract_demo_contacts(fingertips, cloud, scale)


def save_demo_contacts(path: str | Path, demo: DemoContacts, cloud_file: str) -> None:
    from .geometry.io import save_point_cloud

    doc = {
        "cloud_file": cloud_file,
        "scale": demo.scale,
        "fingertips": {str(f): [float(x) for x in p] for f, p in demo.fingertips.items()},
        "contacts": {str(f): [float(x) for x in p] for f, p in demo.contacts.items()},
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    save_point_cloud(path.parent / cloud_file, demo.cloud)


def candidates_to_dict(cands: ContactCandidateSet) -> dict:
    return {
        str(f): [
            {
                "point": [float(x) for x in c.point],
                "normal": [float(x) for x in c.normal],
                "weight": c.weight,
                "members": c.members,
            }
            for c in cands.per_finger[f]
        ]
        for f in cands.fingers
    }


def candidates_from_dict(doc: dict) -> ContactCandidateSet:
    per_finger = {}
    for f, lst in doc.items():
        cands = tuple(
            Candidate(np.asarray(c["point"], dtype=float), np.asarray(c["normal"], dtype=float),
                      float(c["weight"]), int(c["members"]))
            for c in lst
        )
        if not (1 <= len(cands) <= MAX_CANDIDATES_PER_FINGER):
            raise ValidationError([f"finger {f} must carry 1..{MAX_CANDIDATES_PER_FINGER} candidates"])
        for c in cands:
            if not (0.0 <= c.weight <= 1.0):
                raise ValidationError([f"finger {f} candidate weight {c.weight} outside [0, 1]"])
        per_finger[int(f)] = cands
    return ContactCandidateSet(per_finger)


def save_candidates(path: str | Path, cands: ContactCandidateSet) -> None:
    Path(path).write_text(json.dumps(candidates_to_dict(cands), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_candidates(path: str | Path) -> ContactCandidateSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from None
    return candidates_from_dict(doc)
