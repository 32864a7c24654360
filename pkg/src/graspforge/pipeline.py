"""Batch pipeline: validate inputs, transfer contacts, adapt grasps, verify,
and emit a dataset of grasp records with full provenance.

Every run is a pure function of (inputs, config, seed): records, matrices,
candidate files, and the manifest are byte-identical across repeated runs.
Wall-clock timings go to a separate timings file excluded from the manifest.

Seed derivation: stage randomness uses numpy SeedSequence([root_seed,
stage_code, object_rank]) where stage codes are 2 = adaptation and
3 = render-pose emission, and object_rank is the object's position in the
sorted id list. Object surface sampling seeds live in the object sidecars
(they are data definitions, not run randomness).
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dro import compute_distance_matrix, default_hand_points, save_distance_matrix
from .errors import GraspForgeError, ParseError, ValidationError
from .geometry.camera import fibonacci_sphere_views, look_at
from .geometry.io import load_camera
from .hand import Grasp, HandModel, load_hand_model, validate_hand_model
from .losses import ContactAssignment, LossWeights
from .objects import ObjectModel, load_object_model
from .optimize import ChainResult, OptimizationConfig, optimize
from .transfer import (
    aggregate_candidates,
    load_candidates,
    load_correspondences,
    load_demo_contacts,
    save_candidates,
    transfer_via_correspondences,
)
from .verify import VerificationReport, VerifyThresholds, verify

log = logging.getLogger(__name__)

STAGE_ADAPT = 2
STAGE_RENDER_POSES = 3


@dataclass(frozen=True)
class TransferParams:
    snap_radius_px: float = 4.0
    visibility_depth_tol: float = 0.01
    cluster_eps: float = 0.015
    cluster_min_pts: int = 4
    render_view_count: int = 42
    render_pose_count: int = 1200

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DroParams:
    hand_points: int = 128
    anchors_per_point: int | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PipelineConfig:
    hand_model: Path
    objects_dir: Path
    demo_contacts: Path
    demo_views_dir: Path
    renders_dir: Path
    correspondences_dir: Path
    output_dir: Path
    seed: int = 0
    grasps_to_keep: int = 10
    transfer: TransferParams = field(default_factory=TransferParams)
    weights: LossWeights = field(default_factory=LossWeights)
    optimization: OptimizationConfig = field(default_factory=OptimizationConfig)
    dro: DroParams = field(default_factory=DroParams)
    verify: VerifyThresholds = field(default_factory=VerifyThresholds)

    def to_dict(self) -> dict:
        return {
            "paths": {
                "hand_model": str(self.hand_model),
                "objects_dir": str(self.objects_dir),
                "demo_contacts": str(self.demo_contacts),
                "demo_views_dir": str(self.demo_views_dir),
                "renders_dir": str(self.renders_dir),
                "correspondences_dir": str(self.correspondences_dir),
                "output_dir": str(self.output_dir),
            },
            "seed": self.seed,
            "grasps_to_keep": self.grasps_to_keep,
            "transfer": self.transfer.to_dict(),
            "weights": self.weights.to_dict(),
            "optimization": self.optimization.to_dict(),
            "dro": self.dro.to_dict(),
            "verify": self.verify.to_dict(),
        }

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()


def _load_toml_or_json(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON ({e})") from None
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{path}: invalid TOML ({e})") from None


def _build(section_cls, doc: dict, where: str):
    known = {f for f in section_cls.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")
    return section_cls(**doc)


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Read a TOML or JSON pipeline configuration. Relative paths resolve
    against the config file's directory. Overrides: seed, output_dir."""
    path = Path(path)
    doc = _load_toml_or_json(path)
    overrides = overrides or {}
    try:
        paths = doc["paths"]
        base = path.parent

        def resolve(key: str) -> Path:
            p = Path(paths[key])
            return p if p.is_absolute() else base / p

        opt_doc = dict(doc.get("optimization", {}))
        if opt_doc.get("resample_period", 1) in (0, None):
            opt_doc["resample_period"] = None
        dro_doc = dict(doc.get("dro", {}))
        if dro_doc.get("anchors_per_point", 1) in (0, None):
            dro_doc["anchors_per_point"] = None
        config = PipelineConfig(
            hand_model=resolve("hand_model"),
            objects_dir=resolve("objects_dir"),
            demo_contacts=resolve("demo_contacts"),
            demo_views_dir=resolve("demo_views_dir"),
            renders_dir=resolve("renders_dir"),
            correspondences_dir=resolve("correspondences_dir"),
            output_dir=resolve("output_dir"),
            seed=int(doc.get("seed", 0)),
            grasps_to_keep=int(doc.get("grasps_to_keep", 10)),
            transfer=_build(TransferParams, doc.get("transfer", {}), f"{path}: transfer"),
            weights=_build(LossWeights, doc.get("weights", {}), f"{path}: weights"),
            optimization=_build(OptimizationConfig, opt_doc, f"{path}: optimization"),
            dro=_build(DroParams, dro_doc, f"{path}: dro"),
            verify=_build(VerifyThresholds, doc.get("verify", {}), f"{path}: verify"),
        )
    except KeyError as e:
        raise ParseError(f"{path}: missing config key {e}") from None
    if "seed" in overrides and overrides["seed"] is not None:
        config = replace(config, seed=int(overrides["seed"]))
    if "output_dir" in overrides and overrides["output_dir"] is not None:
        config = replace(config, output_dir=Path(overrides["output_dir"]))
    return config


def derived_seed(root_seed: int, stage: int, object_rank: int) -> int:
    return int(np.random.SeedSequence([root_seed, stage, object_rank]).generate_state(1)[0])


def list_object_ids(config: PipelineConfig) -> list[str]:
    return sorted(p.stem for p in config.objects_dir.glob("*.json"))


# ---------------------------------------------------------------------------
# validation

def validate_inputs(config: PipelineConfig) -> list[str]:
    """Check file existence, schema conformance, hand invariants, and mesh
    watertightness. Returns every problem found (empty = valid)."""
    problems: list[str] = []

    def check_path(p: Path, what: str, is_dir: bool = False) -> bool:
        ok = p.is_dir() if is_dir else p.is_file()
        if not ok:
            problems.append(f"{what} not found: {p}")
        return ok

    if check_path(config.hand_model, "hand model"):
        try:
            model = load_hand_model(config.hand_model)
            problems.extend(validate_hand_model(model))
        except (ParseError, ValidationError) as e:
            problems.append(f"hand model: {e}")

    if check_path(config.objects_dir, "objects directory", is_dir=True):
        ids = list_object_ids(config)
        if not ids:
            problems.append(f"objects directory {config.objects_dir} holds no object sidecars")
        for oid in ids:
            try:
                obj = load_object_model(config.objects_dir / f"{oid}.json", oid)
                if not obj.mesh.is_watertight:
                    problems.append(
                        f"object '{oid}': mesh is not watertight but the collision "
                        "stage requires signed distances"
                    )
            except (ParseError, ValidationError, OSError) as e:
                problems.append(f"object '{oid}': {e}")
            cpath = config.correspondences_dir / f"{oid}.jsonl"
            if cpath.is_file():
                try:
                    load_correspondences(cpath)
                except (ParseError, ValidationError) as e:
                    problems.append(f"correspondences '{oid}': {e}")
            else:
                problems.append(f"correspondence file not found: {cpath}")
            rdir = config.renders_dir / oid
            if not rdir.is_dir() or not list(rdir.glob("*.json")):
                problems.append(f"render views not found for object '{oid}': {rdir}")

    if check_path(config.demo_contacts, "demo contacts"):
        try:
            load_demo_contacts(config.demo_contacts)
        except (ParseError, ValidationError, OSError) as e:
            problems.append(f"demo contacts: {e}")
    if check_path(config.demo_views_dir, "demo views directory", is_dir=True):
        for vp in sorted(config.demo_views_dir.glob("*.json")):
            try:
                load_camera(vp)
            except (ParseError, ValidationError) as e:
                problems.append(f"demo view {vp.name}: {e}")

    try:
        config.optimization.validate()
        config.weights.validate()
    except ValidationError as e:
        problems.extend(e.problems)
    return problems


# ---------------------------------------------------------------------------
# stages

def _load_views_dir(path: Path) -> dict[str, "object"]:
    views = {}
    for vp in sorted(path.glob("*.json")):
        view = load_camera(vp)
        views[view.view_id] = view
    return views


def run_transfer_stage(config: PipelineConfig, object_id: str, obj: ObjectModel):
    demo = load_demo_contacts(config.demo_contacts)
    demo_views = _load_views_dir(config.demo_views_dir)
    render_views = _load_views_dir(config.renders_dir / object_id)
    correspondences = load_correspondences(config.correspondences_dir / f"{object_id}.jsonl")
    clouds = transfer_via_correspondences(
        demo, demo_views, render_views, correspondences,
        snap_radius_px=config.transfer.snap_radius_px,
        visibility_depth_tol=config.transfer.visibility_depth_tol,
    )
    return aggregate_candidates(
        clouds, obj.mesh,
        eps=config.transfer.cluster_eps, min_pts=config.transfer.cluster_min_pts,
    )


def run_adapt_stage(config: PipelineConfig, object_rank: int, model: HandModel,
                    obj: ObjectModel, candidates) -> list[ChainResult]:
    opt = replace(config.optimization, seed=derived_seed(config.seed, STAGE_ADAPT, object_rank))
    return optimize(model, obj, candidates, config.weights, opt)


def render_pose_list(config: PipelineConfig, object_rank: int, obj: ObjectModel) -> list[dict]:
    """Camera poses an external renderer would consume: the object placed
    within a 1 m^3 working cube, poses looking at it from random offsets."""
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, STAGE_RENDER_POSES, object_rank])
    )
    center = obj.mesh.vertices.mean(axis=0)
    poses = []
    for i in range(config.transfer.render_pose_count):
        offset = rng.uniform(-0.5, 0.5, size=3)
        offset[2] = abs(offset[2]) + 0.2  # stay above the table plane
        ext = look_at(center + offset, center)
        q = ext.quaternion()
        poses.append({
            "pose_id": i,
            "extrinsics": {
                "translation": [float(x) for x in ext.translation],
                "quaternion": [float(x) for x in q],
            },
        })
    return poses


def transfer_camera_layout(config: PipelineConfig, obj: ObjectModel) -> list[dict]:
    """Deterministic near-uniform sphere of render viewpoints for the
    correspondence stage, emitted for external renderers."""
    center = obj.mesh.vertices.mean(axis=0)
    radius = float(np.linalg.norm(obj.mesh.vertices - center, axis=1).max())
    views = fibonacci_sphere_views(
        config.transfer.render_view_count, max(4.0 * radius, 0.15), center,
        prefix=f"{obj.object_id}_render",
    )
    out = []
    for v in views:
        q = v.extrinsics.quaternion()
        out.append({
            "view_id": v.view_id,
            "intrinsics": {"fx": v.fx, "fy": v.fy, "cx": v.cx, "cy": v.cy},
            "extrinsics": {
                "translation": [float(x) for x in v.extrinsics.translation],
                "quaternion": [float(x) for x in q],
            },
            "width": v.width,
            "height": v.height,
        })
    return out


def _json_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True)


def chain_record(object_id: str, result: ChainResult, seed: int) -> dict:
    g = result.grasp.to_dict()
    return {
        "object_id": object_id,
        "chain": result.chain,
        "pose": g["pose"],
        "joints": g["joints"],
        "final_losses": {**{k: float(v) for k, v in result.parts.items()},
                         "total": float(result.loss)},
        "assignment": result.assignment.to_dict(),
        "aborted": result.aborted,
        "seed": seed,
    }


@dataclass
class ObjectOutcome:
    object_id: str
    records: list[dict] = field(default_factory=list)
    chains: int = 0
    passing: int = 0
    error: str | None = None
    timings: dict[str, float] = field(default_factory=dict)


def process_object(config: PipelineConfig, object_rank: int, object_id: str,
                   model: HandModel) -> ObjectOutcome:
    """Transfer, adapt, verify, and serialize one object's grasps. Writes the
    per-object artifacts; dataset-level files are written by the caller."""
    outcome = ObjectOutcome(object_id)
    out = config.output_dir
    t_start = time.perf_counter()
    try:
        obj = load_object_model(config.objects_dir / f"{object_id}.json", object_id)
        obj.mesh.require_watertight()

        t0 = time.perf_counter()
        candidates = run_transfer_stage(config, object_id, obj)
        outcome.timings["transfer"] = time.perf_counter() - t0
        if not candidates.fingers:
            outcome.error = "no contact candidates survived transfer"
            return outcome
        (out / "candidates").mkdir(parents=True, exist_ok=True)
        save_candidates(out / "candidates" / f"{object_id}.json", candidates)

        (out / "cameras").mkdir(parents=True, exist_ok=True)
        (out / "cameras" / f"{object_id}_transfer_views.json").write_text(
            json.dumps(transfer_camera_layout(config, obj), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        (out / "render_poses").mkdir(parents=True, exist_ok=True)
        (out / "render_poses" / f"{object_id}.json").write_text(
            json.dumps(render_pose_list(config, object_rank, obj), sort_keys=True) + "\n",
            encoding="utf-8",
        )

        t0 = time.perf_counter()
        results = run_adapt_stage(config, object_rank, model, obj, candidates)
        outcome.timings["adapt"] = time.perf_counter() - t0
        outcome.chains = len(results)
        adapt_seed = derived_seed(config.seed, STAGE_ADAPT, object_rank)
        (out / "grasps").mkdir(parents=True, exist_ok=True)
        with (out / "grasps" / f"{object_id}.jsonl").open("w", encoding="utf-8") as fh:
            for r in sorted(results, key=lambda r: r.chain):
                fh.write(_json_line(chain_record(object_id, r, adapt_seed)) + "\n")

        t0 = time.perf_counter()
        verified: list[tuple[ChainResult, VerificationReport]] = []
        for r in results:
            if r.aborted:
                continue
            report = verify(r.grasp, model, obj, config.verify)
            if report.passed:
                verified.append((r, report))
        outcome.passing = len(verified)
        verified.sort(key=lambda rv: (-rv[1].quality, rv[0].loss, rv[0].chain))
        kept = verified[: config.grasps_to_keep]
        outcome.timings["verify"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        hand_pts = default_hand_points(model, config.dro.hand_points)
        (out / "matrices").mkdir(parents=True, exist_ok=True)
        for r, report in kept:
            matrix = compute_distance_matrix(
                model, r.grasp, obj.surface.points, hand_pts,
            )
            rel = f"matrices/{object_id}_{r.chain:03d}.drom"
            save_distance_matrix(out / rel, matrix)
            rec = chain_record(object_id, r, adapt_seed)
            del rec["aborted"]
            rec.update({
                "verification": report.to_dict(),
                "distance_matrix": rel,
                "candidates_file": f"candidates/{object_id}.json",
                "config_hash": config.config_hash(),
            })
            outcome.records.append(rec)
        outcome.timings["emit"] = time.perf_counter() - t0
    except (GraspForgeError, OSError) as e:
        outcome.error = str(e)
    outcome.timings["total"] = time.perf_counter() - t_start
    return outcome


def _worker(config_path: str, overrides: dict, object_rank: int, object_id: str) -> ObjectOutcome:
    config = load_config(config_path, overrides)
    model = load_hand_model(config.hand_model)
    return process_object(config, object_rank, object_id, model)


@dataclass
class RunResult:
    outcomes: list[ObjectOutcome]
    record_count: int
    manifest_path: Path


def run_pipeline(
    config: PipelineConfig,
    jobs: int = 1,
    config_path: str | Path | None = None,
    overrides: dict | None = None,
) -> RunResult:
    """Execute the full pipeline over every object, in sorted object-id
    order. Objects run in parallel when jobs > 1 (requires config_path for
    worker processes); emission order stays schedule-independent."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    model = load_hand_model(config.hand_model)
    ids = list_object_ids(config)
    if not ids:
        raise ValidationError([f"no object sidecars under {config.objects_dir}"])

    if jobs > 1 and config_path is not None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_worker, str(config_path), overrides or {}, rank, oid)
                for rank, oid in enumerate(ids)
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [process_object(config, rank, oid, model) for rank, oid in enumerate(ids)]

    records = []
    for oc in outcomes:
        if oc.error:
            log.warning("object '%s' emitted no records: %s", oc.object_id, oc.error)
        records.extend(oc.records)
    records.sort(key=lambda r: (r["object_id"], r["chain"]))
    with (out / "records.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_json_line(rec) + "\n")

    manifest = {}
    for p in sorted(out.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(out).as_posix()
        if rel in ("manifest.json", "timings.json"):
            continue
        manifest[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps({"config_hash": config.config_hash(), "artifacts": manifest},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out / "timings.json").write_text(
        json.dumps({oc.object_id: oc.timings for oc in outcomes}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return RunResult(outcomes, len(records), manifest_path)


# ---------------------------------------------------------------------------
# summary

def load_records(output_dir: Path) -> list[dict]:
    path = Path(output_dir) / "records.jsonl"
    if not path.is_file():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def emit_summary(output_dir: str | Path) -> dict:
    """Aggregate the emitted dataset: per-object record counts, quality and
    loss statistics, plus stage runtimes when the timings file exists."""
    output_dir = Path(output_dir)
    records = load_records(output_dir)
    per_object: dict[str, dict] = {}
    for rec in records:
        entry = per_object.setdefault(
            rec["object_id"],
            {"records": 0, "qualities": [], "total_losses": []},
        )
        entry["records"] += 1
        entry["qualities"].append(rec["verification"]["quality"])
        entry["total_losses"].append(rec["final_losses"]["total"])
    objects = {}
    for oid, entry in sorted(per_object.items()):
        q = np.array(entry["qualities"])
        tl = np.array(entry["total_losses"])
        objects[oid] = {
            "records": entry["records"],
            "mean_quality": float(q.mean()),
            "min_quality": float(q.min()),
            "mean_total_loss": float(tl.mean()),
            "max_total_loss": float(tl.max()),
        }
    summary = {"total_records": len(records), "objects": objects}
    timings_path = output_dir / "timings.json"
    if timings_path.is_file():
        timings = json.loads(timings_path.read_text(encoding="utf-8"))
        stage_totals: dict[str, float] = {}
        for per_stage in timings.values():
            for stage, dt in per_stage.items():
                stage_totals[stage] = stage_totals.get(stage, 0.0) + dt
        summary["runtime_seconds"] = {k: round(v, 3) for k, v in sorted(stage_totals.items())}
    return summary
