"""Grasp objective: six loss terms with analytic gradients.

Every term returns (value, gradient) where the gradient runs over the
6 + K grasp parameters (rotation tangent, translation, joint angles).
Nearest-neighbor assignments inside the stability, auxiliary, and collision
terms are recomputed at every evaluation but held constant in the gradient
(envelope treatment); the result matches finite differences away from
assignment boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry.mesh import SignedDistanceTracker, TriangleMesh, signed_distances_with_gradient
from .geometry.pointset import OrientedPointSet, nearest_points
from .hand import ForwardKinematics, Grasp, HandModel, direction_jacobian, forward_kinematics, point_jacobian
from .objects import ObjectModel
from .transfer import ContactCandidateSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """Weights for the total objective plus the normal-alignment balance
    alpha (m^2): alpha = 0.01 makes a 1 rad normal error cost about as much
    as a 1 cm position error."""

    w_prior: float = 100.0
    w_stab: float = 20.0
    w_aux: float = 5.0
    w_joint: float = 1.0
    w_coll: float = 200.0
    w_self: float = 100.0
    alpha: float = 0.01

    def validate(self) -> None:
        bad = [k for k, v in self.__dict__.items() if v < 0]
        if bad:
            raise ValidationError([f"loss weight '{k}' must be non-negative" for k in bad])

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ContactAssignment:
    """One (hand candidate, object candidate) pair per designated finger."""

    fingers: tuple[int, ...]
    hand_links: tuple[int, ...]
    hand_candidates: tuple[int, ...]
    object_candidates: tuple[int, ...]

    def validate(self, model: HandModel, candidates: ContactCandidateSet) -> None:
        problems = []
        if not (len(self.fingers) == len(self.hand_links) == len(self.hand_candidates)
                == len(self.object_candidates)):
            raise ValidationError(["assignment component lengths differ"])
        for f, link, hc, oc in zip(self.fingers, self.hand_links, self.hand_candidates,
                                   self.object_candidates):
            if f not in candidates.per_finger:
                problems.append(f"finger {f} has no candidate set")
                continue
            if not (0 <= oc < len(candidates.per_finger[f])):
                problems.append(f"finger {f} object candidate {oc} out of range")
            if link not in model.contact_points:
                problems.append(f"finger {f} hand link {link} has no contact candidates")
            elif not (0 <= hc < len(model.contact_points[link])):
                problems.append(f"finger {f} hand candidate {hc} out of range on link {link}")
        if problems:
            raise ValidationError(problems)

    def to_dict(self) -> dict:
        return {
            "fingers": list(self.fingers),
            "hand_links": list(self.hand_links),
            "hand_candidates": list(self.hand_candidates),
            "object_candidates": list(self.object_candidates),
        }

    @staticmethod
    def from_dict(d: dict) -> "ContactAssignment":
        return ContactAssignment(
            tuple(d["fingers"]), tuple(d["hand_links"]),
            tuple(d["hand_candidates"]), tuple(d["object_candidates"]),
        )


def _assigned_hand_points(model: HandModel, assignment: ContactAssignment):
    """(link, link-frame point, link-frame normal) per assigned finger."""
    out = []
    for link, hc in zip(assignment.hand_links, assignment.hand_candidates):
        out.append((link, model.contact_points[link][hc], model.contact_normals[link][hc]))
    return out


def loss_prior(
    grasp: Grasp,
    model: HandModel,
    candidates: ContactCandidateSet,
    assignment: ContactAssignment,
    alpha: float,
    fk: ForwardKinematics | None = None,
) -> tuple[float, np.ndarray]:
    """Pull assigned hand contact points onto their assigned object
    candidates: sum of squared position error plus alpha * (1 - n_h . n_o)."""
    fk = fk or forward_kinematics(model, grasp)
    value = 0.0
    grad = np.zeros(6 + model.num_joints)
    hand_pts = _assigned_hand_points(model, assignment)
    for (link, p_link, n_link), f, oc in zip(hand_pts, assignment.fingers,
                                             assignment.object_candidates):
        cands = candidates.per_finger.get(f, ())
        if not cands:
            log.warning("finger %d has no candidates; excluded from contact-prior loss", f)
            continue
        cand = cands[oc]
        t = fk.transforms[link]
        h = t.apply(p_link)
        n_h = t.apply_vector(n_link)
        diff = h - cand.point
        value += float(diff @ diff) + alpha * (1.0 - float(n_h @ cand.normal))
        jp = point_jacobian(model, fk, grasp, link, p_link)
        jn = direction_jacobian(model, fk, link, n_h)
        grad += 2.0 * diff @ jp - alpha * (cand.normal @ jn)
    return value, grad


def _nearest_surface_pull(
    model: HandModel,
    grasp: Grasp,
    fk: ForwardKinematics,
    surface: OrientedPointSet,
    entries: list[tuple[int, np.ndarray]],
) -> tuple[float, np.ndarray]:
    """Sum ||h - nearest surface sample||^2 over (link, link-frame point)
    entries, with the nearest sample treated as constant in the gradient."""
    value = 0.0
    grad = np.zeros(6 + model.num_joints)
    if not entries:
        return value, grad
    world = np.array([fk.transforms[link].apply(p) for link, p in entries])
    idx, _ = nearest_points(surface, world)
    for (link, p_link), h, oi in zip(entries, world, idx):
        diff = h - surface.points[oi]
        value += float(diff @ diff)
        grad += 2.0 * diff @ point_jacobian(model, fk, grasp, link, p_link)
    return value, grad


def loss_stability(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    assignment: ContactAssignment,
    fk: ForwardKinematics | None = None,
) -> tuple[float, np.ndarray]:
    """Pull the same assigned finger points onto their nearest object surface
    samples, counteracting scale-mismatch float."""
    fk = fk or forward_kinematics(model, grasp)
    entries = [(link, p) for link, p, _ in _assigned_hand_points(model, assignment)]
    return _nearest_surface_pull(model, grasp, fk, obj.surface, entries)


def loss_auxiliary(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    fk: ForwardKinematics | None = None,
) -> tuple[float, np.ndarray]:
    """Same pull for contact candidates on auxiliary links (e.g. the palm).
    Zero when the model designates no auxiliary links."""
    fk = fk or forward_kinematics(model, grasp)
    entries = [
        (link, p)
        for link in model.auxiliary_links
        for p in model.contact_points.get(link, np.zeros((0, 3)))
    ]
    return _nearest_surface_pull(model, grasp, fk, obj.surface, entries)


def loss_joint_limits(model: HandModel, joint_angles: np.ndarray) -> tuple[float, np.ndarray]:
    """Quadratic penalty outside the joint limits, zero and flat inside."""
    theta = np.asarray(joint_angles, dtype=float)
    over = np.maximum(0.0, theta - model.upper_limits)
    under = np.maximum(0.0, model.lower_limits - theta)
    grad = np.zeros(6 + model.num_joints)
    grad[6:] = 2.0 * over - 2.0 * under
    return float(np.sum(over**2) + np.sum(under**2)), grad


def loss_collision(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    fk: ForwardKinematics | None = None,
    tracker: SignedDistanceTracker | None = None,
) -> tuple[float, np.ndarray]:
    """Squared penetration depth of each hand collision sphere into the
    object: sum of max(0, r - signed_distance(center))^2.

    A SignedDistanceTracker may be supplied to amortize queries across the
    iterations of one optimization chain; results are identical."""
    fk = fk or forward_kinematics(model, grasp)
    entries = [
        (link, c, r)
        for link in range(model.num_links)
        for c, r in zip(model.collision_centers[link], model.collision_radii[link])
    ]
    if not entries:
        return 0.0, np.zeros(6 + model.num_joints)
    centers = np.array([fk.transforms[link].apply(c) for link, c, _ in entries])
    radii = np.array([r for _, _, r in entries])
    if tracker is not None:
        sd, sd_grad = tracker.query(centers, radii)
    else:
        sd, sd_grad = signed_distances_with_gradient(obj.mesh, centers)
    pen = np.maximum(0.0, radii - sd)
    value = float(np.sum(pen**2))
    grad = np.zeros(6 + model.num_joints)
    for (link, c, _), p, g in zip(entries, pen, sd_grad):
        if p <= 0.0:
            continue
        grad += (-2.0 * p * g) @ point_jacobian(model, fk, grasp, link, c)
    return value, grad


def self_penetration_pairs(model: HandModel) -> list[tuple[int, int, int, int]]:
    """Collision-sphere pairs on distinct, non-adjacent (not parent-child)
    links: (link_i, sphere_i, link_j, sphere_j)."""
    pairs = []
    for li in range(model.num_links):
        for lj in range(li + 1, model.num_links):
            if model.parents[lj] == li or model.parents[li] == lj:
                continue
            for si in range(len(model.collision_radii[li])):
                for sj in range(len(model.collision_radii[lj])):
                    pairs.append((li, si, lj, sj))
    return pairs


def loss_self_penetration(
    grasp: Grasp,
    model: HandModel,
    fk: ForwardKinematics | None = None,
) -> tuple[float, np.ndarray]:
    """Squared overlap of collision spheres on non-adjacent links."""
    fk = fk or forward_kinematics(model, grasp)
    value = 0.0
    grad = np.zeros(6 + model.num_joints)
    for li, si, lj, sj in self_penetration_pairs(model):
        ci = fk.transforms[li].apply(model.collision_centers[li][si])
        cj = fk.transforms[lj].apply(model.collision_centers[lj][sj])
        d = np.linalg.norm(ci - cj)
        pen = model.collision_radii[li][si] + model.collision_radii[lj][sj] - d
        if pen <= 0.0:
            continue
        value += pen * pen
        if d < 1e-12:
            continue  # coincident centers: direction undefined, zero measure
        u = (ci - cj) / d
        ji = point_jacobian(model, fk, grasp, li, model.collision_centers[li][si])
        jj = point_jacobian(model, fk, grasp, lj, model.collision_centers[lj][sj])
        grad += -2.0 * pen * (u @ (ji - jj))
    return value, grad


def total_loss(
    grasp: Grasp,
    model: HandModel,
    obj: ObjectModel,
    candidates: ContactCandidateSet,
    assignment: ContactAssignment,
    weights: LossWeights,
    fk: ForwardKinematics | None = None,
    tracker: SignedDistanceTracker | None = None,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Weighted sum of all six terms; also reports the unweighted parts."""
    fk = fk or forward_kinematics(model, grasp)
    v_prior, g_prior = loss_prior(grasp, model, candidates, assignment, weights.alpha, fk)
    v_stab, g_stab = loss_stability(grasp, model, obj, assignment, fk)
    v_aux, g_aux = loss_auxiliary(grasp, model, obj, fk)
    v_joint, g_joint = loss_joint_limits(model, grasp.joint_angles)
    v_coll, g_coll = loss_collision(grasp, model, obj, fk, tracker)
    v_self, g_self = loss_self_penetration(grasp, model, fk)
    value = (
        weights.w_prior * v_prior
        + weights.w_stab * v_stab
        + weights.w_aux * v_aux
        + weights.w_joint * v_joint
        + weights.w_coll * v_coll
        + weights.w_self * v_self
    )
    grad = (
        weights.w_prior * g_prior
        + weights.w_stab * g_stab
        + weights.w_aux * g_aux
        + weights.w_joint * g_joint
        + weights.w_coll * g_coll
        + weights.w_self * g_self
    )
    parts = {
        "prior": v_prior, "stab": v_stab, "aux": v_aux,
        "joint": v_joint, "coll": v_coll, "self": v_self,
    }
    return value, grad, parts
