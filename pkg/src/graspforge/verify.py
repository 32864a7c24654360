"""Analytic grasp verification.

Stability is decided by quasi-static wrench resistance: discretized friction
cones at the detected contacts must produce a non-negative combination
canceling a unit external force from each of six axis directions. Grasp
quality is the Ferrari-Canny radius: the largest origin-centered ball inside
the convex hull of the unit contact wrenches, evaluated within the linear
span of the wrench set so lower-dimensional but well-opposed contact sets
(e.g. an antipodal pinch) are not scored zero for lacking a torque they are
never asked to resist. Functionality and avoidance are distance gates
against the object's tagged regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import ValidationError
from .geometry.mesh import nearest_surface_points
from .hand import Grasp, HandModel, forward_kinematics
from .objects import ObjectModel

STABILITY_SUBSTITUTION_NOTE = (
    "stability gate: quasi-static six-direction wrench resistance substituted "
    "for the simulator displacement test (object displacement < 2 cm under "
    "external forces); thresholds retained as provenance metadata"
)

DEFAULT_CONTACT_THRESHOLD = 0.003  # m
DEFAULT_FRICTION = 0.5
DEFAULT_CONE_EDGES = 8
DEFAULT_FUNCTIONAL_EPS = 0.001  # m
DEFAULT_AVOIDANCE_MARGIN = 0.003  # m
LP_TOL = 1e-9

AXIS_DIRECTIONS = np.array(
    [[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0]]
)


@dataclass(frozen=True)
class ContactState:
    """Detected hand-object contacts: surface points with inward normals."""

    points: np.ndarray  # (C, 3)
    normals: np.ndarray  # (C, 3) unit, pointing into the object
    friction: float
    fingers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # -1 aux

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class VerificationReport:
    stable: bool
    quality: float
    resisted_directions: list[bool]
    functional: bool
    functional_distances: dict[int, float]
    avoidance_clear: bool
    min_avoidance_distance: float
    stabilizing_fingers: list[int]
    contact_count: int
    note: str = STABILITY_SUBSTITUTION_NOTE

    @property
    def passed(self) -> bool:
        return self.stable and self.functional and self.avoidance_clear

    def to_dict(self) -> dict:
        return {
            "stable": self.stable,
            "quality": self.quality,
            "resisted_directions": list(self.resisted_directions),
            "functional": self.functional,
            "functional_distances": {str(k): v for k, v in self.functional_distances.items()},
            "avoidance_clear": self.avoidance_clear,
            "min_avoidance_distance": (
                self.min_avoidance_distance if math.isfinite(self.min_avoidance_distance) else None
            ),
            "stabilizing_fingers": list(self.stabilizing_fingers),
            "contact_count": self.contact_count,
            "passed": self.passed,
            "note": self.note,
        }

    @staticmethod
    def from_dict(d: dict) -> "VerificationReport":
        mad = d["min_avoidance_distance"]
        return VerificationReport(
            stable=bool(d["stable"]),
            quality=float(d["quality"]),
            resisted_directions=[bool(x) for x in d["resisted_directions"]],
            functional=bool(d["functional"]),
            functional_distances={int(k): float(v) for k, v in d["functional_distances"].items()},
            avoidance_clear=bool(d["avoidance_clear"]),
            min_avoidance_distance=math.inf if mad is None else float(mad),
            stabilizing_fingers=[int(x) for x in d["stabilizing_fingers"]],
            contact_count=int(d["contact_count"]),
            note=d["note"],
        )


@dataclass(frozen=True)
class VerifyThresholds:
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD
    friction: float = DEFAULT_FRICTION
    cone_edges: int = DEFAULT_CONE_EDGES
    functional_eps: float = DEFAULT_FUNCTIONAL_EPS
    avoidance_margin: float = DEFAULT_AVOIDANCE_MARGIN

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def extract_contacts(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
    friction: float = DEFAULT_FRICTION,
) -> ContactState:
    """Hand contact candidates within the threshold of the object surface
    become contacts at their surface projections with inward normals."""
    fk = forward_kinematics(model, grasp)
    link_to_finger = {li: f for f, chain in enumerate(model.fingers) for li in chain}
    pts, fingers = [], []
    for link in model.contact_links():
        world = fk.transforms[link].apply(model.contact_points[link])
        for p in world:
            pts.append(p)
            fingers.append(link_to_finger.get(link, -1))
    if not pts:
        return ContactState(np.zeros((0, 3)), np.zeros((0, 3)), friction)
    pts = np.array(pts)
    proj, nrm, dist = nearest_surface_points(obj.mesh, pts)
    keep = dist <= contact_threshold
    return ContactState(
        proj[keep], -nrm[keep], friction, np.array(fingers, dtype=int)[keep]
    )


def friction_cone_wrenches(
    contacts: ContactState, centroid: np.ndarray, scale: float, cone_edges: int = DEFAULT_CONE_EDGES
) -> np.ndarray:
    """Unit-force wrenches for each cone edge at each contact: (C*m, 6),
    torque about the centroid divided by the characteristic length."""
    wrenches = []
    for p, n in zip(contacts.points, contacts.normals):
        # orthonormal tangent basis
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        t1 = np.cross(n, a)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        for k in range(cone_edges):
            phi = 2.0 * math.pi * k / cone_edges
            f = n + contacts.friction * (math.cos(phi) * t1 + math.sin(phi) * t2)
            f /= np.linalg.norm(f)
            tau = np.cross(p - centroid, f) / scale
            wrenches.append(np.concatenate([f, tau]))
    return np.array(wrenches).reshape(-1, 6)


def _cone_contains(wrenches: np.ndarray, target: np.ndarray, tol: float = LP_TOL) -> bool:
    """Is target in the convex cone of the wrench columns? Solved as an
    elastic feasibility LP: min ||s|| s.t. W^T lambda + s = target, lambda >= 0."""
    m = len(wrenches)
    if m == 0:
        return False
    # variables: lambda (m), s+ (6), s- (6)
    c = np.concatenate([np.zeros(m), np.ones(12)])
    a_eq = np.hstack([wrenches.T, np.eye(6), -np.eye(6)])
    res = linprog(c, A_eq=a_eq, b_eq=target, bounds=[(0, None)] * (m + 12), method="highs")
    return bool(res.success and res.fun <= tol)


def ferrari_canny_quality(wrenches: np.ndarray, span_tol: float = 1e-9) -> float:
    """Radius of the largest origin-centered ball inside the convex hull of
    the unit-normalized wrenches, measured within their linear span."""
    if len(wrenches) == 0:
        return 0.0
    norms = np.linalg.norm(wrenches, axis=1)
    unit = wrenches[norms > 0] / norms[norms > 0, None]
    if len(unit) == 0:
        return 0.0
    # project onto the span so flat-but-balanced wrench sets keep a radius
    u, s, vt = np.linalg.svd(unit, full_matrices=False)
    rank = int(np.sum(s > span_tol * s[0])) if s[0] > 0 else 0
    if rank == 0:
        return 0.0
    coords = unit @ vt[:rank].T
    if rank == 1:
        lo, hi = coords.min(), coords.max()
        return float(min(-lo, hi)) if lo < 0 < hi else 0.0
    if len(coords) <= rank:
        return 0.0
    try:
        hull = ConvexHull(coords)
    except QhullError:
        return 0.0
    # equations: n.x + b <= 0 inside; distance of origin to each facet = -b
    offsets = -hull.equations[:, -1]
    if offsets.min() <= 0.0:
        return 0.0  # origin on or outside the hull
    return float(offsets.min())


def check_wrench_resistance(
    contacts: ContactState,
    centroid: np.ndarray,
    characteristic_length: float,
    directions: np.ndarray | None = None,
    cone_edges: int = DEFAULT_CONE_EDGES,
) -> tuple[list[bool], float]:
    """For each external unit force direction, can the contacts produce the
    canceling wrench? Also returns the Ferrari-Canny quality."""
    directions = AXIS_DIRECTIONS if directions is None else np.atleast_2d(directions)
    if len(contacts) == 0:
        return [False] * len(directions), 0.0
    w = friction_cone_wrenches(contacts, np.asarray(centroid, dtype=float),
                               characteristic_length, cone_edges)
    resisted = [
        _cone_contains(w, np.concatenate([-d, np.zeros(3)])) for d in directions
    ]
    return resisted, ferrari_canny_quality(w)


def check_functionality(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    functional_eps: float = DEFAULT_FUNCTIONAL_EPS,
) -> tuple[bool, dict[int, float]]:
    """Every designated finger must bring a fingertip (distal-link) contact
    candidate within functional_eps of its functional region."""
    fk = forward_kinematics(model, grasp)
    distances: dict[int, float] = {}
    for f in model.functional_fingers:
        region = obj.functional_points(f)
        if region is None:
            raise ValidationError(
                [f"object '{obj.object_id}' has no functional region for designated finger {f}"]
            )
        distal = model.distal_link(f)
        world = fk.transforms[distal].apply(model.contact_points[distal])
        d = np.linalg.norm(region.points[None, :, :] - world[:, None, :], axis=2)
        distances[f] = float(d.min())
    ok = all(d < functional_eps for d in distances.values())
    return ok, distances


def check_avoidance(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    margin: float = DEFAULT_AVOIDANCE_MARGIN,
) -> tuple[bool, float]:
    """No hand surface sample may come within the margin of an avoidance
    point. Empty avoidance region: clear, distance +inf."""
    region = obj.avoidance_points()
    if region is None:
        return True, math.inf
    fk = forward_kinematics(model, grasp)
    world = np.vstack([
        fk.transforms[link].apply(model.surface_samples[link])
        for link in sorted(model.surface_samples)
    ])
    d, _ = cKDTree(region.points).query(world)
    dmin = float(np.min(d))
    return dmin > margin, dmin


def importance_map(
    object_points: np.ndarray, hand_points: np.ndarray, temperature: float = 0.02
) -> np.ndarray:
    """Probability over object points decreasing in the distance to the
    nearest hand point: p_i proportional to exp(-d_i / temperature)."""
    object_points = np.atleast_2d(np.asarray(object_points, dtype=float))
    hand_points = np.atleast_2d(np.asarray(hand_points, dtype=float))
    if len(object_points) == 0 or len(hand_points) == 0:
        raise ValidationError(["importance map needs non-empty point sets"])
    if temperature <= 0:
        raise ValidationError(["temperature must be positive"])
    d, _ = cKDTree(hand_points).query(object_points)
    logits = -d / temperature
    logits -= logits.max()  # stable softmax
    p = np.exp(logits)
    return p / p.sum()


def importance_sample(
    points: np.ndarray, probabilities: np.ndarray, count: int, seed: int
) -> np.ndarray:
    """Sequential draw-and-renormalize sampling without replacement,
    proportional to the probabilities. Returns sorted indices."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(probabilities, dtype=float).copy()
    n = len(points)
    if len(p) != n:
        raise ValidationError(["probability vector length must match point count"])
    if count > n:
        raise ValidationError([f"cannot draw {count} from {n} points without replacement"])
    if count == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    chosen = np.empty(count, dtype=int)
    for i in range(count):
        total = p.sum()
        if total <= 0:
            remaining = np.where(p >= 0)[0]
            pool = np.setdiff1d(remaining, chosen[:i])
            chosen[i:] = pool[: count - i]
            break
        idx = int(rng.choice(n, p=p / total))
        chosen[i] = idx
        p[idx] = 0.0
    return np.sort(chosen)


def verify(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    thresholds: VerifyThresholds | None = None,
) -> VerificationReport:
    """Compose the stability, functionality, and avoidance checks. A grasp
    passes overall iff all three hold."""
    th = thresholds or VerifyThresholds()
    contacts = extract_contacts(grasp, model, obj, th.contact_threshold, th.friction)
    centroid = obj.mesh.vertices.mean(axis=0)
    extent = obj.mesh.vertices.max(axis=0) - obj.mesh.vertices.min(axis=0)
    scale = float(max(extent.max(), 1e-9))
    resisted, quality = check_wrench_resistance(contacts, centroid, scale,
                                                cone_edges=th.cone_edges)
    stable = all(resisted) and len(contacts) > 0
    functional, distances = check_functionality(grasp, model, obj, th.functional_eps)
    clear, min_avoid = check_avoidance(grasp, model, obj, th.avoidance_margin)
    report = VerificationReport(
        stable=stable,
        quality=quality,
        resisted_directions=list(resisted),
        functional=functional,
        functional_distances=distances,
        avoidance_clear=clear,
        min_avoidance_distance=min_avoid,
        stabilizing_fingers=sorted({int(f) for f in contacts.fingers if f >= 0}),
        contact_count=len(contacts),
    )
    assert not report.stable or all(report.resisted_directions)
    assert not report.functional or all(
        d < th.functional_eps for d in report.functional_distances.values()
    )
    return report
