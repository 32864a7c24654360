"""Articulated hand model: loading, forward kinematics, and grasp Jacobians.

A hand is a rooted tree of rigid links. Joints are listed one per degree of
freedom and act on their child link, applied after the link's fixed transform
to its parent. The grasp pose replaces the root link's transform outright.

Hand-description documents are UTF-8 JSON; see docs/hand_schema.md. All
lengths are meters, angles radians, quaternions (w, x, y, z).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    MissingCandidatesError,
    ParseError,
    ValidationError,
)
from .transforms import (
    UNIT_TOL,
    RigidTransform,
    quat_exp,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    skew,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class Joint:
    child: int
    axis: np.ndarray
    kind: str
    lower: float
    upper: float


@dataclass(frozen=True)
class HandModel:
    """Immutable hand description. Safe to share across threads."""

    link_names: tuple[str, ...]
    parents: np.ndarray  # (L,) int, -1 for the root
    fixed_transforms: tuple[RigidTransform, ...]
    collision_centers: tuple[np.ndarray, ...]  # per link (S_l, 3)
    collision_radii: tuple[np.ndarray, ...]  # per link (S_l,)
    joints: tuple[Joint, ...]
    fingers: tuple[tuple[int, ...], ...]
    contact_points: dict[int, np.ndarray]  # link -> (C_l, 3)
    contact_normals: dict[int, np.ndarray]  # link -> (C_l, 3)
    surface_samples: dict[int, np.ndarray]  # link -> (P_l, 3)
    functional_fingers: tuple[int, ...]
    auxiliary_links: tuple[int, ...]
    # derived, filled by _finalize
    topo_order: tuple[int, ...] = ()
    joints_by_link: dict[int, tuple[int, ...]] = field(default_factory=dict)
    affects: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))

    @property
    def num_links(self) -> int:
        return len(self.link_names)

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_fingers(self) -> int:
        return len(self.fingers)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def root(self) -> int:
        return int(np.where(self.parents < 0)[0][0])

    def grip_links(self, finger: int) -> tuple[int, ...]:
        """Middle and distal links of a finger chain (last two, or the only one)."""
        chain = self.fingers[finger]
        return chain[-2:] if len(chain) >= 2 else chain

    def distal_link(self, finger: int) -> int:
        return self.fingers[finger][-1]

    def contact_links(self) -> tuple[int, ...]:
        """Links carrying contact candidates, in index order."""
        return tuple(sorted(self.contact_points))


@dataclass(frozen=True)
class Grasp:
    """Hand root pose plus joint angles: rotation quaternion (w,x,y,z),
    translation in meters, joint angles in radians (revolute) or meters
    (prismatic)."""

    rotation: np.ndarray
    translation: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "joint_angles", np.asarray(self.joint_angles, dtype=float))
        if self.rotation.shape != (4,):
            raise DimensionError(f"rotation must be a quaternion of length 4, got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise DimensionError(f"translation must have length 3, got {self.translation.shape}")
        if abs(np.linalg.norm(self.rotation) - 1.0) > UNIT_TOL:
            raise ValidationError(
                f"grasp rotation quaternion norm {np.linalg.norm(self.rotation):.12f} is not 1"
            )

    def updated(self, delta_rot: np.ndarray, delta_t: np.ndarray, delta_joints: np.ndarray) -> "Grasp":
        """Apply a tangent-space update: left exp-map rotation, additive rest."""
        q = quat_normalize(quat_multiply(quat_exp(delta_rot), self.rotation))
        return Grasp(q, self.translation + delta_t, self.joint_angles + delta_joints)

    def to_dict(self) -> dict:
        return {
            "pose": {"q": [float(v) for v in self.rotation], "t": [float(v) for v in self.translation]},
            "joints": [float(v) for v in self.joint_angles],
        }

    @staticmethod
    def from_dict(d: dict) -> "Grasp":
        return Grasp(np.array(d["pose"]["q"]), np.array(d["pose"]["t"]), np.array(d["joints"]))


@dataclass(frozen=True)
class ForwardKinematics:
    """World transforms per link plus per-joint world axes/origins for Jacobians."""

    transforms: tuple[RigidTransform, ...]
    joint_axes: np.ndarray  # (K, 3) world
    joint_origins: np.ndarray  # (K, 3) world


def _parse_transform(node: dict, where: str) -> RigidTransform:
    try:
        t = np.asarray(node["translation"], dtype=float)
        q = np.asarray(node["quaternion"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{where}: transform needs 'translation' and 'quaternion' ({e})") from None
    if t.shape != (3,) or q.shape != (4,):
        raise ParseError(f"{where}: translation must be length 3 and quaternion length 4")
    return RigidTransform.from_quat(q, t)


def _finalize(model: HandModel) -> HandModel:
    """Compute topological order, per-link joint lists, and joint->link reach."""
    n = model.num_links
    order: list[int] = []
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    root = -1
    for i, p in enumerate(model.parents):
        if p < 0:
            root = i
        else:
            children[int(p)].append(i)
    stack = [root]
    while stack:
        l = stack.pop()
        order.append(l)
        stack.extend(reversed(children[l]))

    by_link: dict[int, list[int]] = {}
    for k, j in enumerate(model.joints):
        by_link.setdefault(j.child, []).append(k)

    # affects[k, l]: does joint k move link l (child-or-descendant of joint's link)
    affects = np.zeros((model.num_joints, n), dtype=bool)
    ancestors: dict[int, set[int]] = {}
    for l in order:
        p = int(model.parents[l])
        ancestors[l] = {l} if p < 0 else ({l} | ancestors[p])
    for k, j in enumerate(model.joints):
        for l in range(n):
            affects[k, l] = j.child in ancestors[l]
    affects.setflags(write=False)

    return replace(
        model,
        topo_order=tuple(order),
        joints_by_link={l: tuple(v) for l, v in by_link.items()},
        affects=affects,
    )


def load_hand_model(source: str | Path | dict) -> HandModel:
    """Load and validate a hand-description document.

    Raises ParseError on malformed structure (naming the field) and
    ValidationError listing every violated invariant.
    """
    if isinstance(source, (str, Path)):
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ParseError(f"hand document is not valid JSON: {e}") from None
    else:
        doc = source

    for key in ("links", "joints", "fingers", "contact_candidates", "surface_samples",
                "auxiliary_links", "functional_fingers"):
        if key not in doc:
            raise ParseError(f"hand document missing top-level key '{key}'")

    names: list[str] = []
    parents: list[int] = []
    fixed: list[RigidTransform] = []
    coll_c: list[np.ndarray] = []
    coll_r: list[np.ndarray] = []
    for i, ln in enumerate(doc["links"]):
        where = f"links[{i}]"
        if "name" not in ln:
            raise ParseError(f"{where}: missing 'name'")
        names.append(str(ln["name"]))
        parents.append(int(ln.get("parent", -1)) if not isinstance(ln.get("parent"), str)
                       else -2)  # placeholder, resolved below
        fixed.append(_parse_transform(ln.get("transform", {"translation": [0, 0, 0], "quaternion": [1, 0, 0, 0]}), where))
        spheres = ln.get("collision_spheres", [])
        try:
            centers = np.array([s["center"] for s in spheres], dtype=float).reshape(len(spheres), 3)
            radii = np.array([s["radius"] for s in spheres], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{where}.collision_spheres: each sphere needs 'center' and 'radius'") from None
        coll_c.append(centers)
        coll_r.append(radii)

    name_to_idx = {n: i for i, n in enumerate(names)}
    if len(name_to_idx) != len(names):
        raise ParseError("links: duplicate link names")

    # parents may be given by name
    for i, ln in enumerate(doc["links"]):
        p = ln.get("parent", -1)
        if isinstance(p, str):
            if p not in name_to_idx:
                raise ParseError(f"links[{i}].parent: unknown link name '{p}'")
            parents[i] = name_to_idx[p]

    def link_index(ref, where: str) -> int:
        if isinstance(ref, str):
            if ref not in name_to_idx:
                raise ParseError(f"{where}: unknown link name '{ref}'")
            return name_to_idx[ref]
        return int(ref)

    joints: list[Joint] = []
    for k, jn in enumerate(doc["joints"]):
        where = f"joints[{k}]"
        for f in ("child", "axis", "type", "lower", "upper"):
            if f not in jn:
                raise ParseError(f"{where}: missing '{f}'")
        axis = np.asarray(jn["axis"], dtype=float)
        if axis.shape != (3,):
            raise ParseError(f"{where}.axis: must have length 3")
        if jn["type"] not in (REVOLUTE, PRISMATIC):
            raise ParseError(f"{where}.type: must be '{REVOLUTE}' or '{PRISMATIC}'")
        joints.append(Joint(link_index(jn["child"], where + ".child"), axis, jn["type"],
                            float(jn["lower"]), float(jn["upper"])))

    fingers = tuple(
        tuple(link_index(r, f"fingers[{i}]") for r in chain) for i, chain in enumerate(doc["fingers"])
    )

    def per_link_points(node: dict, what: str) -> dict[int, np.ndarray]:
        out = {}
        for ref, pts in node.items():
            li = link_index(ref, what)
            arr = np.asarray(pts, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ParseError(f"{what}['{ref}']: expected an array of 3-vectors")
            out[li] = arr
        return out

    contact_points: dict[int, np.ndarray] = {}
    contact_normals: dict[int, np.ndarray] = {}
    for ref, cands in doc["contact_candidates"].items():
        li = link_index(ref, "contact_candidates")
        try:
            pts = np.array([c["point"] for c in cands], dtype=float).reshape(len(cands), 3)
            nrm = np.array([c["normal"] for c in cands], dtype=float).reshape(len(cands), 3)
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"contact_candidates['{ref}']: each entry needs 'point' and 'normal'") from None
        contact_points[li] = pts
        contact_normals[li] = nrm

    surface = per_link_points(doc["surface_samples"], "surface_samples")
    aux = tuple(sorted(link_index(r, "auxiliary_links") for r in doc["auxiliary_links"]))
    func = tuple(sorted(int(f) for f in doc["functional_fingers"]))

    model = HandModel(
        link_names=tuple(names),
        parents=np.array(parents, dtype=int),
        fixed_transforms=tuple(fixed),
        collision_centers=tuple(coll_c),
        collision_radii=tuple(coll_r),
        joints=tuple(joints),
        fingers=fingers,
        contact_points=contact_points,
        contact_normals=contact_normals,
        surface_samples=surface,
        functional_fingers=func,
        auxiliary_links=aux,
    )
    problems = validate_hand_model(model)
    if problems:
        raise ValidationError(problems)
    return _finalize(model)


def validate_hand_model(model: HandModel) -> list[str]:
    """Return every violated invariant (empty list if the model is valid)."""
    problems: list[str] = []
    n = model.num_links

    roots = [i for i, p in enumerate(model.parents) if p < 0]
    if len(roots) != 1:
        problems.append(f"expected exactly one root link, found {len(roots)}")
    for i, p in enumerate(model.parents):
        if p >= n:
            problems.append(f"link {i} parent index {p} out of range")
    # cycle check by walking up with a step budget
    for i in range(n):
        seen = 0
        j = i
        while j >= 0 and seen <= n:
            j = int(model.parents[j]) if model.parents[j] < n else -1
            seen += 1
        if seen > n:
            problems.append(f"parent chain of link {i} contains a cycle")
            break

    for k, j in enumerate(model.joints):
        if not (0 <= j.child < n):
            problems.append(f"joint {k} child index {j.child} out of range")
        if abs(np.linalg.norm(j.axis) - 1.0) > UNIT_TOL:
            problems.append(f"joint {k} axis norm {np.linalg.norm(j.axis):.12f} is not 1")
        if j.lower > j.upper:
            problems.append(f"joint {k} lower limit {j.lower} exceeds upper limit {j.upper}")

    for li in range(n):
        if np.any(model.collision_radii[li] <= 0):
            problems.append(f"link {li} has a collision sphere with non-positive radius")

    for li, nrm in model.contact_normals.items():
        bad = np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > UNIT_TOL
        if np.any(bad):
            problems.append(f"link {li} has {int(bad.sum())} non-unit contact normal(s)")

    for fi, chain in enumerate(model.fingers):
        for li in chain:
            if not (0 <= li < n):
                problems.append(f"finger {fi} references link index {li} out of range")
        for li in (chain[-2:] if len(chain) >= 2 else chain):
            if 0 <= li < n and len(model.contact_points.get(li, ())) == 0:
                problems.append(
                    f"finger {fi} grip link {li} ('{model.link_names[li]}') has no contact candidates"
                )

    for fi in model.functional_fingers:
        if not (0 <= fi < model.num_fingers):
            problems.append(f"functional finger index {fi} out of range")
    for li in model.auxiliary_links:
        if not (0 <= li < n):
            problems.append(f"auxiliary link index {li} out of range")

    return problems


def forward_kinematics(model: HandModel, grasp: Grasp) -> ForwardKinematics:
    """World transform of every link under the grasp.

    The root transform equals the grasp pose; each child composes
    parent * fixed * joint motion along the declared axis.
    """
    if grasp.joint_angles.shape != (model.num_joints,):
        raise DimensionError(
            f"joint_angles has length {grasp.joint_angles.shape[0]}, model has K={model.num_joints}"
        )
    world: list[RigidTransform | None] = [None] * model.num_links
    axes = np.zeros((model.num_joints, 3))
    origins = np.zeros((model.num_joints, 3))
    root_pose = RigidTransform(quat_to_matrix(grasp.rotation), grasp.translation.copy())
    for l in model.topo_order:
        p = int(model.parents[l])
        if p < 0:
            world[l] = root_pose
            continue
        cur = world[p].compose(model.fixed_transforms[l])
        for k in model.joints_by_link.get(l, ()):
            j = model.joints[k]
            axes[k] = cur.rotation @ j.axis
            origins[k] = cur.translation
            th = grasp.joint_angles[k]
            if j.kind == REVOLUTE:
                c, s = np.cos(th), np.sin(th)
                ax = j.axis
                rot = c * np.eye(3) + s * skew(ax) + (1 - c) * np.outer(ax, ax)
                cur = RigidTransform(cur.rotation @ rot, cur.translation)
            else:
                cur = RigidTransform(cur.rotation, cur.translation + cur.rotation @ (j.axis * th))
        world[l] = cur
    return ForwardKinematics(tuple(world), axes, origins)


def contact_points_world(
    model: HandModel, grasp: Grasp, link_set: list[int] | tuple[int, ...]
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Contact candidates of the requested links mapped to world frame."""
    fk = forward_kinematics(model, grasp)
    out = []
    for li in link_set:
        if li not in model.contact_points or len(model.contact_points[li]) == 0:
            raise MissingCandidatesError(
                f"link {li} ('{model.link_names[li]}') has no contact candidates"
            )
        t = fk.transforms[li]
        pts = t.apply(model.contact_points[li])
        nrms = t.apply_vector(model.contact_normals[li])
        for p, nv in zip(pts, nrms):
            out.append((li, p, nv))
    return out


def point_jacobian(
    model: HandModel, fk: ForwardKinematics, grasp: Grasp, link: int, point_link: np.ndarray
) -> np.ndarray:
    """Derivative of the world position of a link-frame point with respect to
    (rotation tangent, translation, joint angles): a 3 x (6 + K) array."""
    if not (0 <= link < model.num_links):
        raise IndexError(f"link index {link} out of range")
    k = model.num_joints
    p_w = fk.transforms[link].apply(np.asarray(point_link, dtype=float))
    jac = np.zeros((3, 6 + k))
    jac[:, 0:3] = -skew(p_w - grasp.translation)
    jac[:, 3:6] = np.eye(3)
    for j in range(k):
        if not model.affects[j, link]:
            continue
        if model.joints[j].kind == REVOLUTE:
            jac[:, 6 + j] = np.cross(fk.joint_axes[j], p_w - fk.joint_origins[j])
        else:
            jac[:, 6 + j] = fk.joint_axes[j]
    return jac


def direction_jacobian(
    model: HandModel, fk: ForwardKinematics, link: int, direction_world: np.ndarray
) -> np.ndarray:
    """Derivative of a link-attached world direction (e.g. a contact normal)
    with respect to the grasp parameters. Translations and prismatic joints
    do not rotate directions."""
    k = model.num_joints
    d_w = np.asarray(direction_world, dtype=float)
    jac = np.zeros((3, 6 + k))
    jac[:, 0:3] = -skew(d_w)
    for j in range(k):
        if model.affects[j, link] and model.joints[j].kind == REVOLUTE:
            jac[:, 6 + j] = np.cross(fk.joint_axes[j], d_w)
    return jac


def grasp_jacobian(
    model: HandModel,
    grasp: Grasp,
    link: int,
    point_link: np.ndarray,
    verify_with_finite_differences: bool = False,
    fd_step: float = 1e-6,
    fd_rel_tol: float = 1e-4,
) -> np.ndarray:
    """Analytic point Jacobian; optionally cross-checked against central
    finite differences (raises ValidationError on disagreement)."""
    fk = forward_kinematics(model, grasp)
    jac = point_jacobian(model, fk, grasp, link, point_link)
    if verify_with_finite_differences:
        fd = finite_difference_point_jacobian(model, grasp, link, point_link, step=fd_step)
        scale = max(np.abs(fd).max(), 1.0)
        err = np.abs(jac - fd).max() / scale
        if err > fd_rel_tol:
            raise ValidationError(
                f"analytic Jacobian disagrees with finite differences (rel err {err:.3e})"
            )
    return jac


def finite_difference_point_jacobian(
    model: HandModel, grasp: Grasp, link: int, point_link: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of the same world point, for verification."""
    k = model.num_joints
    jac = np.zeros((3, 6 + k))

    def world_point(g: Grasp) -> np.ndarray:
        return forward_kinematics(model, g).transforms[link].apply(point_link)

    for i in range(6 + k):
        dr, dt, dj = np.zeros(3), np.zeros(3), np.zeros(k)
        if i < 3:
            dr[i] = step
        elif i < 6:
            dt[i - 3] = step
        else:
            dj[i - 6] = step
        hi = world_point(grasp.updated(dr, dt, dj))
        lo = world_point(grasp.updated(-dr, -dt, -dj))
        jac[:, i] = (hi - lo) / (2 * step)
    return jac


def clamp_to_limits(model: HandModel, joint_angles: np.ndarray) -> np.ndarray:
    """Clamp each joint angle into its [lower, upper] interval. Idempotent."""
    angles = np.asarray(joint_angles, dtype=float)
    if angles.shape != (model.num_joints,):
        raise DimensionError(
            f"joint_angles has length {angles.shape}, model has K={model.num_joints}"
        )
    return np.clip(angles, model.lower_limits, model.upper_limits)
