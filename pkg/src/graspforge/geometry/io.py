"""Readers and writers for the on-disk geometry formats.

Meshes: ASCII OBJ (polygons fan-triangulated on load) and binary
little-endian PLY. Depth rasters: single-channel 32-bit float PFM.
Camera parameters: one JSON sidecar per view.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..transforms import RigidTransform
from .camera import CameraView
from .mesh import TriangleMesh
from .pointset import OrientedPointSet


def load_obj(path: str | Path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: vertex line needs 3 coordinates")
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                v = tok.split("/")[0]
                i = int(v)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            if len(idx) < 3:
                raise ParseError(f"{path}:{lineno}: face line needs at least 3 vertices")
            for j in range(1, len(idx) - 1):
                faces.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh.create(np.array(vertices, dtype=float), np.array(faces, dtype=np.int64))


def save_obj(path: str | Path, mesh: TriangleMesh) -> None:
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4), "double": ("d", 8), "float64": ("d", 8),
    "uchar": ("B", 1), "uint8": ("B", 1), "char": ("b", 1), "int8": ("b", 1),
    "short": ("h", 2), "int16": ("h", 2), "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4), "uint": ("I", 4), "uint32": ("I", 4),
}


def _parse_ply(path: str | Path):
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements: list[tuple[str, int, list]] = []  # (name, count, props)
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append(("scalar", parts[1], parts[2]))
    if fmt not in ("binary_little_endian", "ascii"):
        raise ParseError(f"{path}: unsupported PLY format '{fmt}'")

    out: dict[str, dict[str, list]] = {}
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            cols: dict[str, list] = {p[-1] if p[0] == "scalar" else p[3]: [] for p in props}
            for _ in range(count):
                for p in props:
                    if p[0] == "scalar":
                        cols[p[2]].append(float(tokens[pos])); pos += 1
                    else:
                        n = int(tokens[pos]); pos += 1
                        cols[p[3]].append([float(tokens[pos + i]) for i in range(n)]); pos += n
            out[name] = cols
        return out

    pos = 0
    for name, count, props in elements:
        cols = {p[-1] if p[0] == "scalar" else p[3]: [] for p in props}
        fixed = all(p[0] == "scalar" for p in props)
        if fixed:
            fmt_str = "<" + "".join(_PLY_TYPES[p[1]][0] for p in props)
            size = struct.calcsize(fmt_str)
            for vals in struct.iter_unpack(fmt_str, body[pos:pos + size * count]):
                for p, v in zip(props, vals):
                    cols[p[2]].append(v)
            pos += size * count
        else:
            for _ in range(count):
                for p in props:
                    if p[0] == "scalar":
                        code, sz = _PLY_TYPES[p[1]]
                        cols[p[2]].append(struct.unpack_from("<" + code, body, pos)[0])
                        pos += sz
                    else:
                        ccode, csz = _PLY_TYPES[p[1]]
                        icode, isz = _PLY_TYPES[p[2]]
                        n = struct.unpack_from("<" + ccode, body, pos)[0]
                        pos += csz
                        vals = struct.unpack_from(f"<{n}{icode}", body, pos)
                        pos += n * isz
                        cols[p[3]].append(list(vals))
        out[name] = cols
    return out


def load_ply_mesh(path: str | Path) -> TriangleMesh:
    parsed = _parse_ply(path)
    if "vertex" not in parsed or "face" not in parsed:
        raise ParseError(f"{path}: PLY mesh needs 'vertex' and 'face' elements")
    v = parsed["vertex"]
    verts = np.column_stack([v["x"], v["y"], v["z"]]).astype(float)
    key = "vertex_indices" if "vertex_indices" in parsed["face"] else "vertex_index"
    tris: list[list[int]] = []
    for poly in parsed["face"][key]:
        poly = [int(i) for i in poly]
        for j in range(1, len(poly) - 1):
            tris.append([poly[0], poly[j], poly[j + 1]])
    return TriangleMesh.create(verts, np.array(tris, dtype=np.int64))


def save_ply_mesh(path: str | Path, mesh: TriangleMesh) -> None:
    buf = [
        b"ply\n",
        b"format binary_little_endian 1.0\n",
        f"element vertex {len(mesh.vertices)}\n".encode(),
        b"property float x\nproperty float y\nproperty float z\n",
        f"element face {len(mesh.triangles)}\n".encode(),
        b"property list uchar int vertex_indices\n",
        b"end_header\n",
        mesh.vertices.astype("<f4").tobytes(),
    ]
    for t in mesh.triangles:
        buf.append(struct.pack("<Biii", 3, int(t[0]), int(t[1]), int(t[2])))
    Path(path).write_bytes(b"".join(buf))


def load_mesh(path: str | Path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    if path.suffix.lower() == ".ply":
        return load_ply_mesh(path)
    raise ParseError(f"{path}: unsupported mesh format '{path.suffix}'")


def load_point_cloud(path: str | Path) -> OrientedPointSet:
    parsed = _parse_ply(path)
    if "vertex" not in parsed:
        raise ParseError(f"{path}: PLY cloud needs a 'vertex' element")
    v = parsed["vertex"]
    pts = np.column_stack([v["x"], v["y"], v["z"]]).astype(float)
    if all(k in v for k in ("nx", "ny", "nz")):
        nrm = np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(float)
        norms = np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm = np.where(norms > 0, nrm / np.maximum(norms, 1e-30), [[0.0, 0.0, 1.0]])
    else:
        nrm = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return OrientedPointSet.create(pts, nrm)


def save_point_cloud(path: str | Path, cloud: OrientedPointSet) -> None:
    buf = [
        b"ply\n",
        b"format binary_little_endian 1.0\n",
        f"element vertex {len(cloud)}\n".encode(),
        b"property float x\nproperty float y\nproperty float z\n",
        b"property float nx\nproperty float ny\nproperty float nz\n",
        b"end_header\n",
        np.hstack([cloud.points, cloud.normals]).astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(buf))


def load_pfm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise ParseError(f"{path}: not a PFM file")
    if parts[0] == b"PF":
        raise ParseError(f"{path}: color PFM not supported, expected single channel 'Pf'")
    try:
        w, h = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ParseError(f"{path}: malformed PFM header") from None
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(parts[3][: w * h * 4], dtype=dtype).reshape(h, w)
    return np.flipud(img).astype(np.float32)  # PFM rows are bottom-to-top


def save_pfm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(image).astype("<f4").tobytes())


def load_camera(path: str | Path) -> CameraView:
    """Camera JSON sidecar; loads the referenced depth PFM when present."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from None
    try:
        intr = doc["intrinsics"]
        extr = doc["extrinsics"]
        width, height = int(doc["width"]), int(doc["height"])
        ext = RigidTransform.from_quat(np.array(extr["quaternion"], dtype=float),
                                       np.array(extr["translation"], dtype=float))
        fx, fy, cx, cy = (float(intr[k]) for k in ("fx", "fy", "cx", "cy"))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: missing or malformed camera field ({e})") from None
    depth = None
    if doc.get("depth_file"):
        depth = load_pfm(path.parent / doc["depth_file"])
    return CameraView.create(doc.get("view_id", path.stem), fx, fy, cx, cy, ext, width, height, depth)


def save_camera(path: str | Path, view: CameraView, depth_file: str | None = None) -> None:
    q = view.extrinsics.quaternion()
    doc = {
        "view_id": view.view_id,
        "intrinsics": {"fx": view.fx, "fy": view.fy, "cx": view.cx, "cy": view.cy},
        "extrinsics": {
            "translation": [float(x) for x in view.extrinsics.translation],
            "quaternion": [float(x) for x in q],
        },
        "width": view.width,
        "height": view.height,
        "depth_file": depth_file,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if depth_file is not None and view.depth is not None:
        save_pfm(Path(path).parent / depth_file, view.depth)
