"""Model file I/O: OBJ meshes, PLY / XYZ point clouds.

The OBJ writer can emit one material per label for color-coded debug
exports of segmentations and derived models.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import DataType, GeometryError, Model


class ParseError(ValueError):
    """Malformed geometry file; message names the offending line."""


def load_model(path, format_hint: Optional[str] = None) -> Model:
    """Load a mesh (OBJ) or point cloud (PLY, XYZ) from disk."""
    path = Path(path)
    fmt = (format_hint or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        return load_obj(path)
    if fmt == "ply":
        return load_ply(path)
    if fmt == "xyz":
        return load_xyz(path)
    raise ParseError(f"{path}: unknown format '{fmt}'")


def save_model(model: Model, path, labels_per_element=None) -> None:
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower()
    if fmt == "obj":
        save_obj(model, path, labels_per_element)
    elif fmt == "ply":
        save_ply(model, path)
    elif fmt == "xyz":
        save_xyz(model, path)
    else:
        raise ParseError(f"{path}: unknown format '{fmt}'")


def load_obj(path) -> Model:
    path = Path(path)
    vertices: list = []
    triangles: list = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for p in parts[1:]:
                    tok = p.split("/")[0]
                    try:
                        i = int(tok)
                    except ValueError:
                        raise ParseError(f"{path}:{lineno}: bad face index '{p}'") from None
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for a, b in zip(idx[1:-1], idx[2:]):  # fan triangulation
                    for i in (idx[0], a, b):
                        if i < 0 or i >= len(vertices):
                            raise ParseError(f"{path}:{lineno}: face index out of range")
                    triangles.append([vertices[idx[0]], vertices[a], vertices[b]])
    if not triangles:
        raise ParseError(f"{path}: no faces found (empty geometry)")
    return Model(DataType.MESH, triangles=np.array(triangles))


def save_obj(model: Model, path, labels_per_element=None) -> None:
    """Write a mesh OBJ; with labels, emits a sidecar MTL and per-label usemtl."""
    if model.kind != DataType.MESH:
        raise GeometryError("OBJ export requires a mesh model")
    path = Path(path)
    lines = []
    if labels_per_element is not None:
        mtl_path = path.with_suffix(".mtl")
        labels = np.asarray(labels_per_element)
        distinct = sorted(set(int(l) for l in labels))
        _write_mtl(mtl_path, distinct)
        lines.append(f"mtllib {mtl_path.name}")
    else:
        labels = None
        distinct = []
    tris = model.triangles
    for v in tris.reshape(-1, 3):
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    if labels is None:
        for i in range(len(tris)):
            b = 3 * i
            lines.append(f"f {b + 1} {b + 2} {b + 3}")
    else:
        for lab in distinct:
            lines.append(f"usemtl label_{lab}")
            for i in np.flatnonzero(labels == lab):
                b = 3 * int(i)
                lines.append(f"f {b + 1} {b + 2} {b + 3}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _label_color(label: int) -> tuple:
    rng = np.random.default_rng(label + 12345)
    h = rng.random()
    # simple HSV->RGB at full saturation/value
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    opts = [(1, f, 0), (1 - f, 1, 0), (0, 1, f), (0, 1 - f, 1), (f, 0, 1), (1, 0, 1 - f)]
    return opts[i]


def _write_mtl(path: Path, labels) -> None:
    lines = []
    for lab in labels:
        r, g, b = _label_color(lab)
        lines.append(f"newmtl label_{lab}")
        lines.append(f"Kd {r:.3f} {g:.3f} {b:.3f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4), "double": ("d", 8), "float64": ("d", 8),
    "uchar": ("B", 1), "uint8": ("B", 1), "char": ("b", 1), "int8": ("b", 1),
    "short": ("h", 2), "ushort": ("H", 2), "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
}


def load_ply(path) -> Model:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    header_end = data.find(b"end_header")
    if header_end < 0:
        raise ParseError(f"{path}: missing end_header")
    header_lines = data[:header_end].decode("ascii", errors="replace").splitlines()
    body = data[data.find(b"\n", header_end) + 1 :]
    fmt = None
    n_vertices = 0
    props: list = []
    in_vertex = False
    for lineno, line in enumerate(header_lines, start=1):
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertices = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ParseError(f"{path}:{lineno}: list property on vertex element")
            if parts[1] not in _PLY_TYPES:
                raise ParseError(f"{path}:{lineno}: unsupported property type {parts[1]}")
            props.append((parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"{path}: unsupported PLY format '{fmt}'")
    if n_vertices == 0:
        raise ParseError(f"{path}: no vertices (empty geometry)")
    names = [p[0] for p in props]
    if fmt == "ascii":
        rows = []
        text = body.decode("ascii", errors="replace").splitlines()
        for lineno, line in enumerate(text[:n_vertices], start=1):
            vals = line.split()
            if len(vals) < len(props):
                raise ParseError(f"{path}: vertex row {lineno}: expected {len(props)} values")
            try:
                rows.append([float(v) for v in vals[: len(props)]])
            except ValueError:
                raise ParseError(f"{path}: vertex row {lineno}: bad number") from None
        if len(rows) < n_vertices:
            raise ParseError(f"{path}: truncated vertex data")
        arr = np.array(rows)
    else:
        fmt_str = "<" + "".join(_PLY_TYPES[t][0] for _, t in props)
        row_size = struct.calcsize(fmt_str)
        if len(body) < row_size * n_vertices:
            raise ParseError(f"{path}: truncated binary vertex data")
        arr = np.array(
            [struct.unpack_from(fmt_str, body, i * row_size) for i in range(n_vertices)],
            dtype=np.float64,
        )
    try:
        cols = [names.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ParseError(f"{path}: vertex element lacks x/y/z") from None
    points = arr[:, cols]
    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = arr[:, [names.index(c) for c in ("nx", "ny", "nz")]]
        lens = np.linalg.norm(normals, axis=1)
        lens[lens == 0] = 1.0
        normals = normals / lens[:, None]
    return Model(DataType.POINT_CLOUD, points=points, normals=normals)


def save_ply(model: Model, path) -> None:
    if model.kind != DataType.POINT_CLOUD:
        raise GeometryError("PLY export requires a point-cloud model")
    pts = model.points
    has_n = model.normals is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}"]
    lines += ["property double x", "property double y", "property double z"]
    if has_n:
        lines += ["property double nx", "property double ny", "property double nz"]
    lines.append("end_header")
    for i in range(len(pts)):
        row = f"{pts[i, 0]:.9g} {pts[i, 1]:.9g} {pts[i, 2]:.9g}"
        if has_n:
            n = model.normals[i]
            row += f" {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_xyz(path) -> Model:
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(f"{path}:{lineno}: expected at least 3 columns")
            try:
                rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad coordinate") from None
    if not rows:
        raise ParseError(f"{path}: no points found (empty geometry)")
    return Model(DataType.POINT_CLOUD, points=np.array(rows))


def save_xyz(model: Model, path) -> None:
    if model.kind != DataType.POINT_CLOUD:
        raise GeometryError("XYZ export requires a point-cloud model")
    lines = [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in model.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
