"""Distance-matrix grasp representation and recovery.

A grasp is encoded as the dense matrix of Euclidean distances between
sampled hand points (via forward kinematics) and object surface points.
Recovery runs algebraic multilateration per hand point followed by damped
least-squares fitting of the pose and joint angles.

File format: binary, magic ``DROM``, little-endian u32 N_h and N_o, then
row-major float32 entries; a companion JSON lists the point identities.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, ParseError, ValidationError
from .hand import (
    Grasp,
    HandModel,
    clamp_to_limits,
    forward_kinematics,
    point_jacobian,
)
from .transforms import RigidTransform, matrix_to_quat

MAGIC = b"DROM"
MIN_HAND_POINTS = 4
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class HandPointId:
    link: int
    point: np.ndarray  # link frame


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray  # (N_h, N_o) float, meters
    hand_points: tuple[HandPointId, ...]
    object_indices: np.ndarray  # indices into the object surface set

    def __post_init__(self):
        problems = []
        v = self.values
        if v.ndim != 2:
            raise ValidationError(["distance matrix must be 2-D"])
        if len(self.hand_points) != v.shape[0]:
            problems.append("hand point count does not match matrix rows")
        if len(self.object_indices) != v.shape[1]:
            problems.append("object index count does not match matrix columns")
        if v.shape[0] < MIN_HAND_POINTS:
            problems.append(f"need at least {MIN_HAND_POINTS} hand points for recovery")
        if not np.isfinite(v).all():
            problems.append("distance matrix contains non-finite entries")
        elif v.size and v.min() < 0:
            problems.append("distance matrix contains negative entries")
        if problems:
            raise ValidationError(problems)


def default_hand_points(model: HandModel, count: int = 128) -> list[HandPointId]:
    """Spread up to `count` sample points over all links carrying surface
    samples, round-robin so every link contributes."""
    pools = [(link, model.surface_samples[link]) for link in sorted(model.surface_samples)]
    if not pools:
        raise ValidationError(["hand model has no surface samples"])
    out: list[HandPointId] = []
    cursor = 0
    while len(out) < count:
        added = False
        for link, pts in pools:
            if cursor < len(pts):
                out.append(HandPointId(link, np.asarray(pts[cursor], dtype=float)))
                added = True
                if len(out) == count:
                    break
        if not added:
            break  # fewer samples than requested: use them all
        cursor += 1
    return out


def hand_points_world(model: HandModel, grasp: Grasp, hand_points: list[HandPointId]) -> np.ndarray:
    fk = forward_kinematics(model, grasp)
    return np.array([fk.transforms[hp.link].apply(hp.point) for hp in hand_points])


def compute_distance_matrix(
    model: HandModel,
    grasp: Grasp,
    object_points: np.ndarray,
    hand_points: list[HandPointId],
    object_indices: np.ndarray | None = None,
) -> DistanceMatrix:
    """Entry (i, j) = distance between world hand point i and object point j."""
    object_points = np.atleast_2d(np.asarray(object_points, dtype=float))
    if len(object_points) == 0 or not hand_points:
        raise ValidationError(["point sets must be non-empty"])
    hw = hand_points_world(model, grasp, hand_points)
    diff = hw[:, None, :] - object_points[None, :, :]
    values = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    idx = np.arange(len(object_points)) if object_indices is None else np.asarray(object_indices)
    return DistanceMatrix(values, tuple(hand_points), idx)


def multilaterate(
    anchors: np.ndarray, distances: np.ndarray, refine: bool = True
) -> tuple[np.ndarray, float]:
    """Solve for the point at the given distances from >= 4 anchors.

    Linearizes by subtracting the first range equation and solves the least
    squares system; an optional single Gauss-Newton step on the true range
    residuals halves noise sensitivity. Returns (point, RMS range residual).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    d = np.asarray(distances, dtype=float)
    if len(anchors) < MIN_HAND_POINTS:
        raise DegenerateGeometryError(f"need at least {MIN_HAND_POINTS} anchors, got {len(anchors)}")
    if len(anchors) != len(d):
        raise ValidationError(["anchor and distance counts differ"])
    centered = anchors - anchors.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= DEGENERACY_TOL:
        raise DegenerateGeometryError(
            f"anchors are degenerate (smallest singular value {sv[-1]:.3e}); "
            "multilateration needs non-coplanar geometry"
        )
    a0 = anchors[0]
    d0 = d[0]
    rest = anchors[1:]
    a_mat = 2.0 * (rest - a0)
    b = d0**2 - d[1:] ** 2 + np.sum(rest**2, axis=1) - np.sum(a0**2)
    x, *_ = np.linalg.lstsq(a_mat, b, rcond=None)
    if refine:
        delta = anchors - x
        norms = np.linalg.norm(delta, axis=1)
        ok = norms > 1e-12
        if ok.all():
            r = norms - d
            jac = -delta / norms[:, None]
            step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
            x = x + step
    residual = float(np.sqrt(np.mean((np.linalg.norm(anchors - x, axis=1) - d) ** 2)))
    return x, residual


@dataclass
class FitResult:
    grasp: Grasp
    rms: float
    iterations: int
    converged: bool
    message: str = ""


def _procrustes(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Best rigid transform mapping source points onto target points."""
    sc = source - source.mean(axis=0)
    tc = target - target.mean(axis=0)
    h = sc.T @ tc
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt = vt.copy()
        vt[-1] *= -1
        r = vt.T @ u.T
    t = target.mean(axis=0) - r @ source.mean(axis=0)
    return RigidTransform(r, t)


def fit_pose_and_joints(
    targets: np.ndarray,
    model: HandModel,
    hand_points: list[HandPointId],
    initial: Grasp,
    damping: float = 1e-4,
    rms_tol: float = 1e-5,
    max_iterations: int = 200,
) -> FitResult:
    """Damped least-squares fit of (pose, joints) so the hand points reach
    the targets. Joints are clamped to limits every step; steps that do not
    reduce the residual are halved. Initialization: rigid Procrustes from
    root-link points (all points under the initial joints as fallback),
    joints from the initial grasp.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(targets) != len(hand_points):
        raise ValidationError(["target count must match hand point count"])
    if len(targets) < MIN_HAND_POINTS:
        raise DegenerateGeometryError(f"need at least {MIN_HAND_POINTS} targets")
    centered = targets - targets.mean(axis=0)
    if np.linalg.svd(centered, compute_uv=False)[-1] <= DEGENERACY_TOL:
        raise DegenerateGeometryError("targets are coplanar; pose fit is ill-posed")

    root = model.root
    root_mask = np.array([hp.link == root for hp in hand_points])
    joints = clamp_to_limits(model, initial.joint_angles)
    if root_mask.sum() >= 3:
        local = np.array([hand_points[i].point for i in np.where(root_mask)[0]])
        pose = _procrustes(local, targets[root_mask])
    else:
        rest = hand_points_world(model, Grasp(np.array([1.0, 0, 0, 0]), np.zeros(3), joints),
                                 hand_points)
        pose = _procrustes(rest, targets)
    grasp = Grasp(matrix_to_quat(pose.rotation), pose.translation, joints)

    def residuals(g: Grasp) -> np.ndarray:
        return (hand_points_world(model, g, hand_points) - targets).ravel()

    r = residuals(grasp)
    rms = float(np.sqrt(np.mean(r**2)))
    k = model.num_joints
    increases = 0
    it = 0
    for it in range(1, max_iterations + 1):
        if rms < rms_tol:
            return FitResult(grasp, rms, it - 1, True)
        fk = forward_kinematics(model, grasp)
        jac = np.vstack([
            point_jacobian(model, fk, grasp, hp.link, hp.point) for hp in hand_points
        ])
        jtj = jac.T @ jac + damping * np.eye(6 + k)
        step = np.linalg.solve(jtj, -jac.T @ r)
        # backtracking: halve until the residual improves (or give up)
        improved = False
        for _ in range(12):
            trial = grasp.updated(step[0:3], step[3:6], step[6:])
            trial = Grasp(trial.rotation, trial.translation,
                          clamp_to_limits(model, trial.joint_angles))
            tr = residuals(trial)
            trms = float(np.sqrt(np.mean(tr**2)))
            if trms < rms:
                grasp, r, rms = trial, tr, trms
                improved = True
                break
            step *= 0.5
        if not improved:
            increases += 1
            if increases >= 10:
                return FitResult(
                    grasp, rms, it, False,
                    "residual failed to decrease for 10 consecutive iterations",
                )
        else:
            increases = 0
    converged = rms < rms_tol
    return FitResult(grasp, rms, it, converged,
                     "" if converged else "iteration limit reached")


@dataclass
class RecoveryResult:
    grasp: Grasp
    multilateration_residuals: np.ndarray  # per hand point
    ik_point_errors: np.ndarray  # per hand point, final
    fit: FitResult


def recover_grasp(
    matrix: DistanceMatrix,
    object_points: np.ndarray,
    model: HandModel,
    initial: Grasp,
    anchors_per_point: int | None = None,
    rms_tol: float = 1e-8,
) -> RecoveryResult:
    """Multilaterate every hand point from its matrix row, then fit the pose
    and joints to the recovered targets. `anchors_per_point` restricts each
    row to its k nearest anchors (all columns by default).

    The fit runs to a tighter tolerance than standalone IK so noiseless
    matrices reproduce hand point positions to well under a micron."""
    object_points = np.atleast_2d(np.asarray(object_points, dtype=float))
    anchors_all = object_points[matrix.object_indices]
    targets = np.empty((matrix.values.shape[0], 3))
    residuals = np.empty(matrix.values.shape[0])
    for i, row in enumerate(matrix.values):
        if anchors_per_point is not None and anchors_per_point < len(row):
            pick = np.argsort(row, kind="stable")[:anchors_per_point]
            targets[i], residuals[i] = multilaterate(anchors_all[pick], row[pick])
        else:
            targets[i], residuals[i] = multilaterate(anchors_all, row)
    fit = fit_pose_and_joints(targets, model, list(matrix.hand_points), initial, rms_tol=rms_tol)
    final = hand_points_world(model, fit.grasp, list(matrix.hand_points))
    ik_err = np.linalg.norm(final - targets, axis=1)
    return RecoveryResult(fit.grasp, residuals, ik_err, fit)


# ---------------------------------------------------------------------------
# file format

def save_distance_matrix(path: str | Path, matrix: DistanceMatrix) -> None:
    n_h, n_o = matrix.values.shape
    payload = MAGIC + struct.pack("<II", n_h, n_o) + matrix.values.astype("<f4").tobytes()
    path = Path(path)
    path.write_bytes(payload)
    companion = {
        "hand_points": [
            {"link": int(hp.link), "point": [float(x) for x in hp.point]}
            for hp in matrix.hand_points
        ],
        "object_indices": [int(i) for i in matrix.object_indices],
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(companion, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_distance_matrix(path: str | Path) -> DistanceMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic, not a distance-matrix file")
    n_h, n_o = struct.unpack("<II", raw[4:12])
    expected = 12 + n_h * n_o * 4
    if len(raw) < expected:
        raise ParseError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    values = np.frombuffer(raw[12:expected], dtype="<f4").reshape(n_h, n_o).astype(float)
    companion_path = path.with_suffix(path.suffix + ".json")
    try:
        companion = json.loads(companion_path.read_text(encoding="utf-8"))
        hand_points = tuple(
            HandPointId(int(hp["link"]), np.asarray(hp["point"], dtype=float))
            for hp in companion["hand_points"]
        )
        object_indices = np.asarray(companion["object_indices"], dtype=int)
    except FileNotFoundError:
        raise ParseError(f"{companion_path}: companion point-id file is missing") from None
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"{companion_path}: malformed companion file ({e})") from None
    return DistanceMatrix(values, hand_points, object_indices)
