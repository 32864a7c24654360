"""Shared fixtures: hand models, procedural meshes, and a synthetic scene
builder that writes a complete, self-consistent set of pipeline inputs
(object meshes + sidecars, demo contacts, posed depth views, and identity
correspondence files) into a directory."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from graspforge.geometry.camera import CameraView, fibonacci_sphere_views, project
from graspforge.geometry.io import save_camera, save_obj, save_point_cloud
from graspforge.geometry.mesh import TriangleMesh, nearest_surface_point, sample_surface
from graspforge.geometry.pointset import OrientedPointSet
from graspforge.geometry.primitives import uv_sphere
from graspforge.geometry.render import render_depth
from graspforge.hand import HandModel, load_hand_model
from graspforge.transfer import CorrespondenceSet, save_correspondences

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "graspforge" / "data" / "hands"


@pytest.fixture(scope="session")
def toy_hand() -> HandModel:
    return load_hand_model(DATA_DIR / "toy_two_finger.json")


@pytest.fixture(scope="session")
def inspire_hand() -> HandModel:
    return load_hand_model(DATA_DIR / "inspire_like.json")


@pytest.fixture(scope="session")
def sphere_mesh() -> TriangleMesh:
    return uv_sphere(0.05, segments=48, rings=24)


def make_depth_views(mesh: TriangleMesh, count: int, radius: float, prefix: str,
                     width: int = 128, height: int = 128) -> list[CameraView]:
    center = mesh.vertices.mean(axis=0)
    views = []
    for v in fibonacci_sphere_views(count, radius, center, width=width, height=height,
                                    prefix=prefix):
        depth = render_depth(mesh, v)
        views.append(CameraView.create(v.view_id, v.fx, v.fy, v.cx, v.cy, v.extrinsics,
                                       v.width, v.height, depth))
    return views


def identity_matches(view: CameraView, stride: int = 1) -> np.ndarray:
    """Grid of (u, v) -> (u, v) matches with confidence 1 wherever the depth
    raster is valid."""
    rows, cols = np.nonzero(view.depth > 0)
    keep = (rows % stride == 0) & (cols % stride == 0)
    rows, cols = rows[keep], cols[keep]
    m = np.empty((len(rows), 5))
    m[:, 0] = cols
    m[:, 1] = rows
    m[:, 2] = cols
    m[:, 3] = rows
    m[:, 4] = 1.0
    return m


def write_views(views: list[CameraView], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for v in views:
        save_camera(directory / f"{v.view_id}.json", v, depth_file=f"{v.view_id}.pfm")


def functional_patch_spec(center, radius_patch=0.006, spacing=0.0005) -> dict:
    """Dense on-surface point disk for a functional region."""
    c = np.asarray(center, dtype=float)
    pts = []
    for du in np.arange(-radius_patch, radius_patch + spacing / 2, spacing):
        for dv in np.arange(-radius_patch, radius_patch + spacing / 2, spacing):
            if du * du + dv * dv > radius_patch**2:
                continue
            pts.append([c[0], c[1] + du, c[2] + dv])
    return {"points": pts}


def build_sphere_scene(
    root: Path,
    radius: float = 0.05,
    segments: int = 48,
    rings: int = 24,
    n_views: int = 16,
    image_size: int = 128,
    camera_radius: float | None = None,
    surface_count: int = 2048,
    cloud_count: int = 3000,
    with_functional_regions: bool = True,
    with_avoidance: bool = False,
    object_id: str = "sphere",
    match_stride: int = 1,
) -> dict:
    """Write a full synthetic scene: one sphere object grasped at its +-x
    poles, demo data rendered from the same geometry, and identity
    correspondences between demo and render views."""
    root = Path(root)
    mesh = uv_sphere(radius, segments=segments, rings=rings)
    center = mesh.vertices.mean(axis=0)

    objects = root / "objects"
    objects.mkdir(parents=True, exist_ok=True)
    save_obj(objects / f"{object_id}.obj", mesh)
    sidecar: dict = {
        "mesh_file": f"{object_id}.obj",
        "scale": 1.0,
        "surface_samples": {"count": surface_count, "seed": 0},
    }
    if with_functional_regions:
        sidecar["functional_regions"] = {
            "0": functional_patch_spec([-radius, 0.0, 0.0]),
            "1": functional_patch_spec([radius, 0.0, 0.0]),
        }
    if with_avoidance:
        sidecar["avoidance_regions"] = functional_patch_spec([0.0, 0.0, radius], 0.004)
    (objects / f"{object_id}.json").write_text(json.dumps(sidecar) + "\n", encoding="utf-8")

    # demo: cloud sampled from the same mesh, fingertips hovering at the poles
    demo_dir = root / "demo"
    demo_dir.mkdir(parents=True, exist_ok=True)
    cloud = sample_surface(mesh, cloud_count, seed=11)
    save_point_cloud(demo_dir / "cloud.ply", cloud)
    fingertips = {
        "0": [-radius - 0.001, 0.0, 0.0],
        "1": [radius + 0.001, 0.0, 0.0],
    }
    (demo_dir / "contacts.json").write_text(
        json.dumps({"cloud_file": "cloud.ply", "scale": 1.0, "fingertips": fingertips}) + "\n",
        encoding="utf-8",
    )

    cam_r = camera_radius if camera_radius is not None else max(4.0 * radius, 0.15)
    demo_views = make_depth_views(mesh, n_views, cam_r, "demo", image_size, image_size)
    render_views = make_depth_views(mesh, n_views, cam_r, "render", image_size, image_size)
    write_views(demo_views, root / "demo" / "views")
    write_views(render_views, root / "renders" / object_id)

    corr_dir = root / "correspondences"
    corr_dir.mkdir(parents=True, exist_ok=True)
    sets = [
        CorrespondenceSet(d.view_id, r.view_id, identity_matches(d, match_stride))
        for d, r in zip(demo_views, render_views)
    ]
    save_correspondences(corr_dir / f"{object_id}.jsonl", sets)

    return {
        "mesh": mesh,
        "demo_views": demo_views,
        "render_views": render_views,
        "object_id": object_id,
        "root": root,
    }


E2E_CONFIG = """\
seed = 7
grasps_to_keep = 10

[paths]
hand_model = "{hand_model}"
objects_dir = "objects"
demo_contacts = "demo/contacts.json"
demo_views_dir = "demo/views"
renders_dir = "renders"
correspondences_dir = "correspondences"
output_dir = "{output_dir}"

[transfer]
render_view_count = 12
render_pose_count = 24

[weights]
alpha = 1e-3

[optimization]
n_grasps = 8
iterations = 1500
step_rotation = 1e-2
step_translation = 1e-3
step_joints = 0.1
initial_temperature = 1e-3
temperature_decay = 0.99
noise_scale = 0.5
resample_period = 100

[dro]
hand_points = 64
"""


def write_e2e_config(root: Path, output_dir: str = "out") -> Path:
    cfg = root / "pipeline.toml"
    cfg.write_text(
        E2E_CONFIG.format(hand_model=DATA_DIR / "toy_two_finger.json", output_dir=output_dir),
        encoding="utf-8",
    )
    return cfg


@pytest.fixture(scope="session")
def sphere_scene(tmp_path_factory) -> dict:
    """Session-wide synthetic scene for transfer/pipeline tests."""
    root = tmp_path_factory.mktemp("scene")
    info = build_sphere_scene(root)
    info["config"] = write_e2e_config(root)
    return info
