"""Shape processing: decompose a model into components and similarity labels.

Meshes are segmented by seeded region growing over the triangle adjacency
graph with single-linkage merging down to the requested region count;
point clouds by Euclidean clustering refined by RANSAC plane splitting.
Labels come from greedy medoid clustering of pairwise similarity scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .geometry import (
    Component,
    ComponentSet,
    DataType,
    GeometryError,
    Model,
    RigidTransform,
    canonical_frame,
    make_component,
    rotation_angle,
)

# RANSAC plane inlier threshold, as a fraction of the model diagonal.
PLANE_THRESH_FRACTION = 0.005


class SegmentationError(GeometryError):
    pass


@dataclass(frozen=True)
class ShapeParams:
    """Segmentation/labeling parameters steered by the guidance loop."""

    theta_geo: float = 0.995   # similarity threshold for sharing a label
    theta_top: float = 0.5     # topological (adjacency-histogram) threshold
    theta_den: float = 4.0     # minimum component size (elements) for clouds
    theta_dir: float = math.pi / 4  # tolerated normal-axis deviation (rad)
    theta_num: float = 4096.0  # region seed count / expected segment count

    BOUNDS = {
        "theta_geo": (0.0, 1.0),
        "theta_top": (0.0, 1.0),
        "theta_den": (0.0, 256.0),
        "theta_dir": (0.0, math.pi / 2),
        "theta_num": (1.0, 4096.0),
    }

    def __post_init__(self):
        for name, (lo, hi) in self.BOUNDS.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside bounds [{lo}, {hi}]")

    @property
    def num_regions(self) -> int:
        return max(1, int(round(self.theta_num)))


@dataclass(frozen=True)
class SimilarityScore:
    """Similarity in [0, 1] (1 = identical) with a per-metric breakdown."""

    value: float
    breakdown: dict = field(default_factory=dict)
    converged: bool = True


# ---------------------------------------------------------------------------
# mesh segmentation


def _triangle_regions(model: Model) -> np.ndarray:
    """Connected components over triangles sharing (rounded) vertices."""
    verts = model.triangles.reshape(-1, 3)
    rounded = np.round(verts, 9)
    _, vid = np.unique(rounded, axis=0, return_inverse=True)
    n_tris = model.n_elements
    tri_ids = np.repeat(np.arange(n_tris), 3)
    # triangles sharing a vertex id are adjacent: connect via vertex nodes
    n_vid = int(vid.max()) + 1
    rows = np.concatenate([tri_ids, vid + n_tris])
    cols = np.concatenate([vid + n_tris, tri_ids])
    data = np.ones(len(rows), dtype=np.int8)
    graph = coo_matrix((data, (rows, cols)), shape=(n_tris + n_vid, n_tris + n_vid))
    _, labels = _cc(graph, directed=False)
    region_of_tri = labels[:n_tris]
    # renumber compactly in order of first appearance
    _, compact = np.unique(region_of_tri, return_inverse=True)
    return compact


def _merge_regions_to(model: Model, region: np.ndarray, target: int) -> np.ndarray:
    """Single-linkage merge of regions (min vertex distance) down to `target`."""
    region = region.copy()
    ids = sorted(set(int(r) for r in region))
    verts = {r: model.element_vertices(np.flatnonzero(region == r)) for r in ids}
    trees = {r: cKDTree(verts[r]) for r in ids}
    while len(ids) > target:
        best = None
        for ai in range(len(ids)):
            a = ids[ai]
            for b in ids[ai + 1 :]:
                d = float(np.min(trees[b].query(verts[a])[0]))
                key = (d, a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        region[region == b] = a
        verts[a] = np.concatenate([verts[a], verts.pop(b)])
        trees[a] = cKDTree(verts[a])
        del trees[b]
        ids.remove(b)
    _, compact = np.unique(region, return_inverse=True)
    return compact


def _pca_extents(points: np.ndarray) -> np.ndarray:
    c = points - points.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return np.sort(s)[::-1] / max(math.sqrt(len(points)), 1.0)


def _dominant_normal_axis(model: Model, idx: np.ndarray) -> np.ndarray:
    tris = model.triangles[idx]
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    outer = n.T @ n
    w, v = np.linalg.eigh(outer)
    return v[:, -1]


def _edge_descriptor(model: Model, idx: np.ndarray) -> np.ndarray:
    tris = model.triangles[idx]
    e = np.stack(
        [
            np.linalg.norm(tris[:, 1] - tris[:, 0], axis=1),
            np.linalg.norm(tris[:, 2] - tris[:, 1], axis=1),
            np.linalg.norm(tris[:, 0] - tris[:, 2], axis=1),
        ],
        axis=1,
    )
    return np.sort(e, axis=1).mean(axis=0)


def mesh_similarity(a: Component, b: Component, model: Model,
                    params: ShapeParams) -> SimilarityScore:
    """Hull-extent, triangle-descriptor, and normal-axis similarity blend."""
    va = model.element_vertices(a.element_indices)
    vb = model.element_vertices(b.element_indices)
    ea = _pca_extents(va)
    eb = _pca_extents(vb)
    # floor extents at 1% of the pair scale so flat components compare sanely
    eps = 0.01 * max(a.bbox.diagonal, b.bbox.diagonal, 1e-30)
    ratios = (np.minimum(ea, eb) + eps) / (np.maximum(ea, eb) + eps)
    hull = float(np.prod(ratios) ** (1.0 / 3.0))
    da = _edge_descriptor(model, a.element_indices)
    db = _edge_descriptor(model, b.element_indices)
    scale = 0.5 * (np.linalg.norm(da) + np.linalg.norm(db))
    tri = float(max(0.0, 1.0 - np.linalg.norm(da - db) / max(scale, eps)))
    # compare dominant normals in each component's canonical frame so that
    # rotated copies of the same shape score as identical
    na = a.local_frame.rotation.T @ _dominant_normal_axis(model, a.element_indices)
    nb = b.local_frame.rotation.T @ _dominant_normal_axis(model, b.element_indices)
    ang = math.acos(min(1.0, abs(float(np.dot(na, nb)))))
    span = max(math.pi / 2 - params.theta_dir, 1e-9)
    direc = float(np.clip(1.0 - max(0.0, ang - params.theta_dir) / span, 0.0, 1.0))
    value = 0.4 * hull + 0.4 * tri + 0.2 * direc
    return SimilarityScore(value, {"hull": hull, "triangle": tri, "direction": direc})


def _adjacency_degree_hist(model: Model, idx: np.ndarray) -> np.ndarray:
    """Histogram of shared-vertex adjacency degrees inside a component."""
    verts = np.round(model.triangles[idx].reshape(-1, 3), 9)
    _, vid = np.unique(verts, axis=0, return_inverse=True)
    tri_of = np.repeat(np.arange(len(idx)), 3)
    deg = np.zeros(len(idx))
    for v in np.unique(vid):
        tris = np.unique(tri_of[vid == v])
        deg[tris] += len(tris) - 1
    hist, _ = np.histogram(np.clip(deg, 0, 11), bins=12, range=(0, 12))
    return hist / max(hist.sum(), 1)


def topological_similarity(a: Component, b: Component, model: Model) -> float:
    """Adjacency-graph degree-histogram proxy for topological similarity."""
    if model.kind != DataType.MESH:
        return 1.0
    ha = _adjacency_degree_hist(model, a.element_indices)
    hb = _adjacency_degree_hist(model, b.element_indices)
    return float(1.0 - 0.5 * np.abs(ha - hb).sum())


def segment_mesh(model: Model, params: ShapeParams, seed: int = 0) -> ComponentSet:
    if model.kind != DataType.MESH:
        raise SegmentationError("segment_mesh requires a mesh model")
    ext = extract_components(model, params, seed)
    if ext is None:
        return _single_component_fallback(model)
    comps, noise = ext
    labels = _label_components(comps, model, params)
    return ComponentSet(model, comps, labels, noise_indices=noise)


def _mesh_components(model: Model, params: ShapeParams) -> list:
    region = _triangle_regions(model)
    n_regions = int(region.max()) + 1
    target = min(params.num_regions, model.n_elements)
    if target < n_regions:
        region = _merge_regions_to(model, region, target)
    return [
        make_component(model, cid, np.flatnonzero(region == cid))
        for cid in range(int(region.max()) + 1)
    ]


def extract_components(model: Model, params: ShapeParams, seed: int = 0):
    """The cheap half of segmentation: (components, noise indices) without
    similarity labels, or None for a degenerate model."""
    if _is_degenerate(model):
        return None
    if model.kind == DataType.MESH:
        return _mesh_components(model, params), np.empty(0, dtype=np.intp)
    return _cloud_components(model, params, seed)


# ---------------------------------------------------------------------------
# point-cloud segmentation


def _median_nn_distance(points: np.ndarray) -> float:
    tree = cKDTree(points)
    d, _ = tree.query(points, k=min(2, len(points)))
    if d.ndim == 1:
        return 0.0
    return float(np.median(d[:, 1]))


def _euclidean_clusters(points: np.ndarray, radius: float) -> list:
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    n = len(points)
    if len(pairs):
        data = np.ones(len(pairs), dtype=np.int8)
        graph = coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, lab = _cc(graph, directed=False)
    else:
        lab = np.arange(n)
    return [np.flatnonzero(lab == l) for l in np.unique(lab)]


def _ransac_plane(points: np.ndarray, thresh: float, rng: np.random.Generator,
                  iters: int = 64):
    """Best plane (normal, offset) by inlier count; None when degenerate."""
    best = None
    n_pts = len(points)
    if n_pts < 3:
        return None
    for _ in range(iters):
        idx = rng.choice(n_pts, size=3, replace=False)
        p0, p1, p2 = points[idx]
        nrm = np.cross(p1 - p0, p2 - p0)
        nn = np.linalg.norm(nrm)
        if nn < 1e-12:
            continue
        nrm = nrm / nn
        dist = np.abs((points - p0) @ nrm)
        count = int((dist < thresh).sum())
        if best is None or count > best[0]:
            best = (count, nrm, float(p0 @ nrm))
    if best is None:
        return None
    return best[1], best[2]


def segment_cloud(model: Model, params: ShapeParams, seed: int = 0) -> ComponentSet:
    if model.kind != DataType.POINT_CLOUD:
        raise SegmentationError("segment_cloud requires a point-cloud model")
    ext = extract_components(model, params, seed)
    if ext is None:
        return _single_component_fallback(model)
    comps, noise = ext
    labels = _label_components(comps, model, params)
    return ComponentSet(model, comps, labels, noise_indices=noise)


def _cloud_components(model: Model, params: ShapeParams, seed: int = 0):
    pts = model.points
    nn = _median_nn_distance(pts)
    radius = max(4.0 * nn, 1e-6 * model.diagonal)
    clusters = _euclidean_clusters(pts, radius)
    kept = [c for c in clusters if len(c) >= max(params.theta_den, 3)]
    noise = [c for c in clusters if len(c) < max(params.theta_den, 3)]
    if not kept:
        raise SegmentationError("all points discarded as noise")
    # RANSAC plane splitting toward the expected segment count
    rng = np.random.default_rng(seed)
    thresh = PLANE_THRESH_FRACTION * model.diagonal
    target = params.num_regions
    unsplittable: set = set()
    while len(kept) < target:
        order = sorted(range(len(kept)), key=lambda i: -len(kept[i]))
        picked = next((i for i in order if i not in unsplittable), None)
        if picked is None:
            break
        cluster = kept[picked]
        plane = _ransac_plane(pts[cluster], thresh, rng)
        if plane is None:
            unsplittable.add(picked)
            continue
        nrm, off = plane
        on_plane = np.abs(pts[cluster] @ nrm - off) < thresh
        if on_plane.all() or not on_plane.any():
            unsplittable.add(picked)
            continue
        pieces = []
        for part in (cluster[on_plane], cluster[~on_plane]):
            for sub in _euclidean_clusters(pts[part], radius):
                pieces.append(part[sub])
        big = [p for p in pieces if len(p) >= max(params.theta_den, 3)]
        small = [p for p in pieces if len(p) < max(params.theta_den, 3)]
        if len(big) <= 1:
            unsplittable.add(picked)
            continue
        kept.pop(picked)
        kept.extend(big)
        noise.extend(small)
        unsplittable = set()
    kept.sort(key=lambda c: int(c[0]))
    comps = [make_component(model, cid, idx) for cid, idx in enumerate(kept)]
    noise_idx = np.concatenate(noise) if noise else np.empty(0, dtype=np.intp)
    return comps, np.sort(noise_idx)


# ---------------------------------------------------------------------------
# ICP and cloud similarity


def icp_align(source: np.ndarray, target: np.ndarray, max_iter: int = 100,
              tol: float = 1e-10, trim: float = 0.8):
    """Trimmed point-to-point ICP.  Returns (RigidTransform, mean residual,
    converged).  Only the best `trim` fraction of correspondences drives each
    update, which keeps partially-overlapping clouds from biasing the pose.

    Local refinement alone stalls beyond ~20 degrees of rotation, so several
    starts are tried — centroid translation plus canonical-frame alignments
    (with axis-pair flips to cover the PCA sign ambiguity) — and the pose
    with the smallest final residual wins.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    for name, arr in (("source", src), ("target", tgt)):
        if len(arr) < 3 or np.linalg.matrix_rank(arr - arr.mean(axis=0), tol=1e-12) < 2:
            raise SegmentationError(f"{name} points are degenerate (collinear)")
    tree = cKDTree(tgt)
    starts = [(np.eye(3), tgt.mean(axis=0) - src.mean(axis=0))]
    fs = canonical_frame(src)
    ft = canonical_frame(tgt)
    for flip in (np.diag([1.0, 1.0, 1.0]), np.diag([-1.0, -1.0, 1.0]),
                 np.diag([-1.0, 1.0, -1.0]), np.diag([1.0, -1.0, -1.0])):
        R0 = ft.rotation @ flip @ fs.rotation.T
        t0 = ft.translation - R0 @ fs.translation
        starts.append((R0, t0))
    best = None
    for R0, t0 in starts:
        cand = _icp_refine(src, tgt, tree, R0, t0, max_iter, tol, trim)
        if best is None or cand[1] < best[1]:
            best = cand
        if best[1] < tol:
            break
    return best


def _icp_refine(src, tgt, tree, R, t, max_iter, tol, trim):
    last = np.inf
    converged = False
    n_keep = max(3, int(round(trim * len(src))))
    for _ in range(max_iter):
        moved = src @ R.T + t
        dist, idx = tree.query(moved)
        keep = np.argsort(dist)[:n_keep]
        residual = float(dist[keep].mean())
        if abs(last - residual) < tol:
            converged = True
            break
        last = residual
        kept = moved[keep]
        corr = tgt[idx[keep]]
        mu_s = kept.mean(axis=0)
        mu_t = corr.mean(axis=0)
        H = (kept - mu_s).T @ (corr - mu_t)
        U, _, Vt = np.linalg.svd(H)
        d = np.sign(np.linalg.det(Vt.T @ U.T))
        Rd = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
        # new map: x -> Rd((R x + t) - mu_s) + mu_t
        R = Rd @ R
        t = Rd @ (t - mu_s) + mu_t
    moved = src @ R.T + t
    dist, _ = tree.query(moved)
    residual = float(np.sort(dist)[:n_keep].mean())
    return RigidTransform(R, t), residual, converged


def cloud_similarity(a: Component, b: Component, model: Model,
                     params: ShapeParams) -> SimilarityScore:
    """ICP-aligned mean correspondence distance, density-normalized."""
    pa = model.element_vertices(a.element_indices)
    pb = model.element_vertices(b.element_indices)
    # canonical source: smaller cloud (tie broken by id) keeps the score symmetric
    if (len(pa), a.id) <= (len(pb), b.id):
        src, tgt = pa, pb
    else:
        src, tgt = pb, pa
    xf, _, converged = icp_align(src, tgt)
    moved = xf.apply(src)

    def trimmed(d):
        # ignore the worst fifth so partial-scan holes do not dominate
        return float(np.sort(d)[: max(3, int(round(0.8 * len(d))))].mean())

    d_fwd = trimmed(cKDTree(tgt).query(moved)[0])
    d_bwd = trimmed(cKDTree(moved).query(tgt)[0])
    mean_corr = 0.5 * (d_fwd + d_bwd)
    spacing = 0.5 * (_median_nn_distance(pa) + _median_nn_distance(pb))
    pair_diag = max(a.bbox.diagonal, b.bbox.diagonal, 1e-12)
    excess = max(0.0, mean_corr - spacing)
    value = float(np.clip(1.0 - excess / (0.05 * pair_diag), 0.0, 1.0))
    return SimilarityScore(value, {"mean_corr": mean_corr, "spacing": spacing},
                           converged=converged)


# ---------------------------------------------------------------------------
# labeling and dispatch


def component_similarity(a: Component, b: Component, model: Model,
                         params: ShapeParams) -> SimilarityScore:
    if model.kind == DataType.MESH:
        return mesh_similarity(a, b, model, params)
    return cloud_similarity(a, b, model, params)


def _label_components(comps, model: Model, params: ShapeParams) -> dict:
    """Greedy medoid clustering: join the first group whose representative
    matches at theta_geo (and theta_top for meshes); ties broken by id."""
    labels: dict = {}
    groups: list = []  # list of (representative Component, label id)
    for comp in sorted(comps, key=lambda c: c.id):
        placed = False
        for rep, lab in groups:
            geo = component_similarity(rep, comp, model, params).value
            if geo < params.theta_geo:
                continue
            if topological_similarity(rep, comp, model) < params.theta_top:
                continue
            labels[comp.id] = lab
            placed = True
            break
        if not placed:
            lab = len(groups)
            groups.append((comp, lab))
            labels[comp.id] = lab
    return labels


def _is_degenerate(model: Model) -> bool:
    return model.bbox.diagonal < 1e-12


def _single_component_fallback(model: Model) -> ComponentSet:
    comp = make_component(model, 0, np.arange(model.n_elements))
    return ComponentSet(model, [comp], {0: 0}, degenerate=True)


def segment(model: Model, params: ShapeParams, seed: int = 0) -> ComponentSet:
    """Shape processing: dispatch by data type, deterministic given inputs."""
    if model.kind == DataType.MESH:
        return segment_mesh(model, params, seed)
    return segment_cloud(model, params, seed)
