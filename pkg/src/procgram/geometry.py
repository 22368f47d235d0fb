"""Core geometric types: elements, models, bounding boxes, rigid transforms.

All types are immutable after construction and safe to share across
threads; every operation here is a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

# Relative tolerance used for degenerate-triangle and orthonormality checks.
GEOM_EPS = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (degenerate elements, empty models, ...)."""


class DataType(Enum):
    MESH = "mesh"
    POINT_CLOUD = "point_cloud"


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Triangle:
    """Single triangle element; vertices must be non-collinear."""

    vertices: np.ndarray  # (3, 3)

    @property
    def normal(self) -> np.ndarray:
        v = self.vertices
        n = np.cross(v[1] - v[0], v[2] - v[0])
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        v = self.vertices
        return 0.5 * float(np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))


@dataclass(frozen=True)
class Point:
    """Single point element with an optional unit normal."""

    position: np.ndarray  # (3,)
    normal: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by min/max corner points."""

    min_point: np.ndarray  # (3,)
    max_point: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "min_point", _as_readonly(self.min_point))
        object.__setattr__(self, "max_point", _as_readonly(self.max_point))
        if np.any(self.min_point > self.max_point + GEOM_EPS):
            raise GeometryError("bounding box min exceeds max")

    @property
    def extents(self) -> np.ndarray:
        return self.max_point - self.min_point

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_point + self.max_point)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def measure(self, scale: float = 1.0) -> float:
        """Volume with degenerate extents clamped; orders flat boxes sensibly."""
        e = np.maximum(self.extents, 1e-9 * max(scale, 1e-30))
        return float(np.prod(e))

    def contains(self, other: "BoundingBox", slack: float = 0.0) -> bool:
        return bool(
            np.all(other.min_point >= self.min_point - slack)
            and np.all(other.max_point <= self.max_point + slack)
        )

    def contains_point(self, p: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(p >= self.min_point - slack) and np.all(p <= self.max_point + slack))

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            np.minimum(self.min_point, other.min_point),
            np.maximum(self.max_point, other.max_point),
        )


def bbox_of(points: np.ndarray) -> BoundingBox:
    """Tight AABB of an (n, 3) array of points (or (n, 3, 3) of triangles)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.size == 0:
        raise GeometryError("bbox of empty point set")
    return BoundingBox(pts.min(axis=0), pts.max(axis=0))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: x -> rotation @ x + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("rigid transform shape mismatch")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise GeometryError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise GeometryError("rotation has negative determinant")
        object.__setattr__(self, "rotation", _as_readonly(R))
        object.__setattr__(self, "translation", _as_readonly(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), np.asarray(t, dtype=np.float64))

    @staticmethod
    def from_axis_angle(axis, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        K = np.array(
            [
                [0.0, -axis[2], axis[1]],
                [axis[2], 0.0, -axis[0]],
                [-axis[1], axis[0], 0.0],
            ]
        )
        R = np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)
        return RigidTransform(R, np.asarray(translation, dtype=np.float64))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def is_identity(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, np.eye(3), atol=tol)
            and np.allclose(self.translation, 0.0, atol=tol)
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition (a ∘ b): apply b first, then a."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix in [0, pi]."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


class Model:
    """Homogeneous bag of geometric elements (all triangles or all points).

    Meshes store triangles as an (n, 3, 3) array; point clouds store an
    (n, 3) position array with optional (n, 3) unit normals.
    """

    def __init__(
        self,
        kind: DataType,
        triangles: Optional[np.ndarray] = None,
        points: Optional[np.ndarray] = None,
        normals: Optional[np.ndarray] = None,
    ):
        self.kind = kind
        if kind == DataType.MESH:
            if triangles is None or len(triangles) == 0:
                raise GeometryError("empty mesh model")
            tris = np.ascontiguousarray(triangles, dtype=np.float64)
            if tris.ndim != 3 or tris.shape[1:] != (3, 3):
                raise GeometryError("triangles must have shape (n, 3, 3)")
            areas = 0.5 * np.linalg.norm(
                np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1
            )
            scale = float(np.abs(tris).max()) or 1.0
            if np.any(areas <= GEOM_EPS * scale * scale):
                bad = int(np.argmin(areas))
                raise GeometryError(f"triangle {bad} is degenerate (collinear vertices)")
            self.triangles = _as_readonly(tris)
            self.points = None
            self.normals = None
        elif kind == DataType.POINT_CLOUD:
            if points is None or len(points) == 0:
                raise GeometryError("empty point-cloud model")
            pts = np.ascontiguousarray(points, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise GeometryError("points must have shape (n, 3)")
            self.points = _as_readonly(pts)
            self.triangles = None
            if normals is not None:
                nrm = np.ascontiguousarray(normals, dtype=np.float64)
                if nrm.shape != pts.shape:
                    raise GeometryError("normals shape mismatch")
                lens = np.linalg.norm(nrm, axis=1)
                if np.any(np.abs(lens - 1.0) > 1e-6):
                    raise GeometryError("point normals must be unit length")
                self.normals = _as_readonly(nrm)
            else:
                self.normals = None
        else:  # pragma: no cover
            raise GeometryError(f"unknown data type {kind}")
        self._bbox = bbox_of(self.all_vertices())

    def all_vertices(self) -> np.ndarray:
        if self.kind == DataType.MESH:
            return self.triangles.reshape(-1, 3)
        return self.points

    @property
    def n_elements(self) -> int:
        return len(self.triangles) if self.kind == DataType.MESH else len(self.points)

    @property
    def bbox(self) -> BoundingBox:
        return self._bbox

    @property
    def diagonal(self) -> float:
        return self._bbox.diagonal

    def element(self, i: int):
        if self.kind == DataType.MESH:
            return Triangle(self.triangles[i])
        n = self.normals[i] if self.normals is not None else None
        return Point(self.points[i], n)

    def elements(self) -> Iterator:
        for i in range(self.n_elements):
            yield self.element(i)

    def element_positions(self, indices=None) -> np.ndarray:
        """Representative positions (centroids for triangles, raw for points)."""
        if self.kind == DataType.MESH:
            tris = self.triangles if indices is None else self.triangles[indices]
            return tris.mean(axis=1)
        return self.points if indices is None else self.points[indices]

    def element_vertices(self, indices) -> np.ndarray:
        """All vertex positions of the selected elements, as (m, 3)."""
        if self.kind == DataType.MESH:
            return self.triangles[np.asarray(indices, dtype=int)].reshape(-1, 3)
        return self.points[np.asarray(indices, dtype=int)]

    def with_normals(self, k: int = 16) -> "Model":
        """Point cloud with k-NN PCA normals estimated where absent."""
        if self.kind != DataType.POINT_CLOUD or self.normals is not None:
            return self
        return Model(
            DataType.POINT_CLOUD, points=self.points, normals=estimate_normals(self.points, k=k)
        )


def estimate_normals(points: np.ndarray, k: int = 16) -> np.ndarray:
    """Per-point normals from PCA over the k nearest neighbors."""
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=np.float64)
    k = min(k, len(pts))
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    normals = np.empty_like(pts)
    for i in range(len(pts)):
        nb = pts[np.atleast_1d(idx[i])]
        nb = nb - nb.mean(axis=0)
        _, _, vt = np.linalg.svd(nb, full_matrices=False)
        normals[i] = vt[-1]
    lens = np.linalg.norm(normals, axis=1)
    lens[lens == 0] = 1.0
    return normals / lens[:, None]


@dataclass(frozen=True)
class Component:
    """A segmented unit: element indices plus its box and local frame.

    `local_frame` maps local coordinates to world space; `local_bbox` is
    the geometry's AABB in the local frame (rotation invariant).
    """

    id: int
    element_indices: np.ndarray
    bbox: BoundingBox
    local_frame: RigidTransform
    local_bbox: BoundingBox

    def __post_init__(self):
        idx = np.asarray(self.element_indices, dtype=np.intp)
        if idx.size == 0:
            raise GeometryError("component with no elements")
        idx = np.sort(idx)
        idx.flags.writeable = False
        object.__setattr__(self, "element_indices", idx)

    @property
    def n_elements(self) -> int:
        return int(self.element_indices.size)


@dataclass(frozen=True)
class ComponentSet:
    """Segmentation output: components plus similarity labels and noise set."""

    model: Model
    components: tuple
    labels: dict  # component id -> label id
    noise_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        seen = np.concatenate([c.element_indices for c in self.components]) if self.components else np.empty(0, dtype=np.intp)
        if len(np.unique(seen)) != len(seen):
            raise GeometryError("components overlap in element indices")
        if set(self.labels) != {c.id for c in self.components}:
            raise GeometryError("labels must cover exactly the component ids")
        noise = np.asarray(self.noise_indices, dtype=np.intp)
        covered = len(seen) + len(noise)
        if covered != self.model.n_elements:
            raise GeometryError(
                f"components + noise cover {covered} of {self.model.n_elements} elements"
            )
        noise.flags.writeable = False
        object.__setattr__(self, "noise_indices", noise)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def n_labels(self) -> int:
        return len(set(self.labels.values()))

    def component_by_id(self, cid: int) -> Component:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def members_of_label(self, label: int) -> list:
        return [c for c in self.components if self.labels[c.id] == label]


def canonical_frame(points: np.ndarray) -> RigidTransform:
    """Deterministic PCA frame of a point set, equivariant under rigid motion.

    Axis signs come from the skewness of the projected coordinates when it
    is decisive, otherwise from the axis's largest coordinate; the third
    axis is the cross product so the frame is right-handed.
    """
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    centered = pts - c
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    scale = max(float(s[0]), 1e-30)
    dist = np.linalg.norm(centered, axis=1)
    far = centered[int(np.argmax(dist))]
    near_max = centered[dist >= dist.max() - 1e-6 * scale]
    # symmetric shapes have several equally-far points; the tie-break is only
    # rotation-invariant when the farthest point is unique
    far_unique = bool(np.all(np.linalg.norm(near_max - far, axis=1) <= 1e-6 * scale))
    axes = []
    for k in range(2):
        axis = vt[k]
        proj = centered @ axis
        sigma = proj.std()
        skew = float((proj**3).mean() / sigma**3) if sigma > 1e-12 else 0.0
        if abs(skew) > 0.05:
            if skew < 0:
                axis = -axis
        elif far_unique and abs(float(far @ axis)) > 1e-6 * scale:
            # farthest-from-centroid point breaks symmetric-distribution ties
            # in a rotation-invariant way
            if float(far @ axis) < 0:
                axis = -axis
        else:
            j = int(np.argmax(np.abs(axis)))
            if axis[j] < 0:
                axis = -axis
        axes.append(axis)
    axes.append(np.cross(axes[0], axes[1]))
    R = np.stack(axes, axis=1)  # columns are local axes in world coords
    return RigidTransform(R, c)


def make_component(model: Model, cid: int, element_indices) -> Component:
    """Component with a tight world bbox and a PCA-canonical local frame."""
    idx = np.asarray(element_indices, dtype=np.intp)
    verts = model.element_vertices(idx)
    bb = bbox_of(verts)
    frame = canonical_frame(verts)
    local = bbox_of(frame.inverse().apply(verts))
    return Component(cid, idx, bb, frame, local)
