"""Parallel grasp optimization: annealed Langevin-style descent with
Metropolis accept/reject over the total objective.

Each of the N chains owns a private RNG stream derived from (seed, chain
index), so results never depend on execution order or thread count. With
zero temperature and zero noise the procedure reduces to projected gradient
descent and the accepted-loss trace is monotonically non-increasing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .hand import Grasp, HandModel, clamp_to_limits, forward_kinematics
from .losses import ContactAssignment, LossWeights, loss_collision, total_loss
from .objects import ObjectModel
from .transfer import ContactCandidateSet
from .transforms import quat_from_axis_angle, quat_multiply, quat_normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizationConfig:
    n_grasps: int = 32
    iterations: int = 2000
    step_rotation: float = 5e-3
    step_translation: float = 1e-3
    step_joints: float = 0.05
    initial_temperature: float = 1e-2
    temperature_decay: float = 0.995
    resample_period: int | None = 50  # None: keep the first assignment
    noise_scale: float = 1.0
    seed: int = 0
    init_distance: float = 0.12
    init_cone_half_angle: float = math.radians(30.0)
    init_joint_jitter: float = 0.1  # fraction of each joint's range
    max_init_attempts: int = 20

    def validate(self) -> None:
        problems = []
        if self.n_grasps < 1:
            problems.append("n_grasps must be >= 1")
        if self.iterations < 1:
            problems.append("iterations must be >= 1")
        for name in ("step_rotation", "step_translation", "step_joints"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.initial_temperature < 0:
            problems.append("initial_temperature must be >= 0")
        if not (0.0 < self.temperature_decay < 1.0):
            problems.append("temperature_decay must lie in (0, 1)")
        if self.resample_period is not None and self.resample_period < 1:
            problems.append("resample_period must be >= 1 or null")
        if problems:
            raise ValidationError(problems)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ChainResult:
    chain: int
    grasp: Grasp
    loss: float
    parts: dict[str, float]
    assignment: ContactAssignment
    trace: list[float] = field(default_factory=list)
    aborted: bool = False


def _hand_candidate_choices(model: HandModel, finger: int) -> list[tuple[int, int]]:
    """(link, candidate index) options on a finger's grip links."""
    return [
        (link, i)
        for link in model.grip_links(finger)
        for i in range(len(model.contact_points.get(link, ())))
    ]


def sample_assignment(
    model: HandModel, candidates: ContactCandidateSet, rng: np.random.Generator
) -> ContactAssignment:
    """Draw one object candidate per finger proportionally to its weight and
    one hand candidate uniformly over the finger's grip-link points."""
    fingers, links, hand_idx, obj_idx = [], [], [], []
    for f in candidates.fingers:
        cands = candidates.per_finger[f]
        if not cands:
            continue
        w = np.array([c.weight for c in cands], dtype=float)
        p = w / w.sum() if w.sum() > 0 else np.full(len(cands), 1.0 / len(cands))
        oc = int(rng.choice(len(cands), p=p))
        choices = _hand_candidate_choices(model, f)
        if not choices:
            raise ValidationError([f"finger {f} has no hand contact candidates to assign"])
        link, hc = choices[int(rng.integers(len(choices)))]
        fingers.append(f)
        links.append(link)
        hand_idx.append(hc)
        obj_idx.append(oc)
    if not fingers:
        raise ValidationError(["candidate set is empty; nothing to assign"])
    return ContactAssignment(tuple(fingers), tuple(links), tuple(hand_idx), tuple(obj_idx))


def _sample_cone(rng: np.random.Generator, axis: np.ndarray, half_angle: float) -> np.ndarray:
    """Uniform direction within the spherical cap of the given half-angle."""
    if half_angle <= 0.0:
        return axis
    cos_t = rng.uniform(math.cos(half_angle), 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    local = np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])
    # rotate +z onto the axis
    z = np.array([0.0, 0.0, 1.0])
    if axis @ z > 1.0 - 1e-12:
        return local
    if axis @ z < -1.0 + 1e-12:
        return np.array([local[0], -local[1], -local[2]])
    rot_axis = np.cross(z, axis)
    rot_axis /= np.linalg.norm(rot_axis)
    angle = math.acos(np.clip(axis @ z, -1.0, 1.0))
    from .transforms import quat_rotate

    return quat_rotate(quat_from_axis_angle(rot_axis, angle), local)


def _approach_rotation(direction: np.ndarray, roll: float) -> np.ndarray:
    """Quaternion mapping the hand approach axis (+z of the root frame) onto
    -direction, then rolled about it."""
    target = -direction / np.linalg.norm(direction)
    z = np.array([0.0, 0.0, 1.0])
    dot = float(np.clip(z @ target, -1.0, 1.0))
    if dot > 1.0 - 1e-12:
        align = np.array([1.0, 0.0, 0.0, 0.0])
    elif dot < -1.0 + 1e-12:
        align = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)
    else:
        axis = np.cross(z, target)
        align = quat_from_axis_angle(axis, math.acos(dot))
    return quat_normalize(quat_multiply(quat_from_axis_angle(target, roll), align))


def _chain_streams(seed: int, chain: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_ss, opt_ss = np.random.SeedSequence([seed, chain]).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(opt_ss)


def _initialize_chain(
    model: HandModel,
    obj: ObjectModel,
    candidates: ContactCandidateSet,
    config: OptimizationConfig,
    rng: np.random.Generator,
) -> Grasp:
    centroid = candidates.weighted_centroid()
    mean_normal = candidates.mean_normal()
    if np.linalg.norm(mean_normal) < 1e-6:
        mean_normal = np.array([0.0, 0.0, 1.0])  # e.g. antipodal candidates cancel out

    mid = 0.5 * (model.lower_limits + model.upper_limits)
    span = model.upper_limits - model.lower_limits
    best: tuple[float, Grasp] | None = None
    for _ in range(max(1, config.max_init_attempts)):
        direction = _sample_cone(rng, mean_normal, config.init_cone_half_angle)
        roll = rng.uniform(0.0, 2.0 * math.pi)
        q = _approach_rotation(direction, roll)
        t = centroid + config.init_distance * direction
        jitter = rng.uniform(-1.0, 1.0, size=model.num_joints) * config.init_joint_jitter * span
        joints = clamp_to_limits(model, mid + jitter)
        grasp = Grasp(q, t, joints)
        coll, _ = loss_collision(grasp, model, obj)
        if best is None or coll < best[0]:
            best = (coll, grasp)
        if coll == 0.0:
            break
    if best[0] > 0.0:
        log.warning("chain initialization kept a colliding start (penetration loss %.3g)", best[0])
    return best[1]


def initialize_grasps(
    model: HandModel,
    obj: ObjectModel,
    candidates: ContactCandidateSet,
    config: OptimizationConfig,
) -> list[Grasp]:
    """N starting grasps: palm at init_distance from the candidates' weighted
    centroid along a cone around the mean candidate normal, approach axis
    facing the object, wrist roll uniform, joints at mid-range with jitter.
    Starts that collide are resampled up to max_init_attempts."""
    config.validate()
    if not candidates.fingers:
        raise ValidationError(["candidate set is empty"])
    return [
        _initialize_chain(model, obj, candidates, config, _chain_streams(config.seed, i)[0])
        for i in range(config.n_grasps)
    ]


def _run_chain(
    chain: int,
    start: Grasp,
    model: HandModel,
    obj: ObjectModel,
    candidates: ContactCandidateSet,
    weights: LossWeights,
    config: OptimizationConfig,
) -> ChainResult:
    from .geometry.mesh import SignedDistanceTracker

    rng = _chain_streams(config.seed, chain)[1]
    tracker = SignedDistanceTracker(obj.mesh)
    steps = np.concatenate([
        np.full(3, config.step_rotation),
        np.full(3, config.step_translation),
        np.full(model.num_joints, config.step_joints),
    ])

    grasp = start
    assignment = sample_assignment(model, candidates, rng)
    value, grad, parts = total_loss(grasp, model, obj, candidates, assignment, weights,
                                    tracker=tracker)
    temperature = config.initial_temperature
    best = ChainResult(chain, grasp, value, parts, assignment)
    trace = [value]

    for it in range(config.iterations):
        if (
            config.resample_period is not None
            and it > 0
            and it % config.resample_period == 0
        ):
            assignment = sample_assignment(model, candidates, rng)
            value, grad, parts = total_loss(grasp, model, obj, candidates, assignment, weights,
                                            tracker=tracker)

        noise_std = config.noise_scale * np.sqrt(2.0 * steps * max(temperature, 0.0))
        delta = -steps * grad + noise_std * rng.standard_normal(len(steps))
        proposal = grasp.updated(delta[0:3], delta[3:6], delta[6:])
        proposal = Grasp(proposal.rotation, proposal.translation,
                         clamp_to_limits(model, proposal.joint_angles))
        new_value, new_grad, new_parts = total_loss(
            proposal, model, obj, candidates, assignment, weights, tracker=tracker
        )

        accept = new_value <= value
        if not accept and temperature > 0.0 and np.isfinite(new_value):
            accept = rng.random() < math.exp(-(new_value - value) / temperature)
        if accept:
            if not np.isfinite(new_value):
                log.warning("chain %d hit a non-finite loss; aborted", chain)
                best.aborted = True
                break
            grasp, value, grad, parts = proposal, new_value, new_grad, new_parts
            if value < best.loss:
                best = ChainResult(chain, grasp, value, parts, assignment)
        trace.append(value)
        temperature *= config.temperature_decay

    best.trace = trace
    return best


def optimize(
    model: HandModel,
    obj: ObjectModel,
    candidates: ContactCandidateSet,
    weights: LossWeights,
    config: OptimizationConfig,
) -> list[ChainResult]:
    """Run N independent annealed-descent chains and return their best
    states sorted by loss (aborted chains last). Deterministic in
    (inputs, seed)."""
    config.validate()
    weights.validate()
    starts = initialize_grasps(model, obj, candidates, config)
    results = [
        _run_chain(i, starts[i], model, obj, candidates, weights, config)
        for i in range(config.n_grasps)
    ]
    results.sort(key=lambda r: (r.aborted, r.loss, r.chain))
    return results
