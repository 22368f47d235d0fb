"""Consensus-model completion for point clouds: merge all aligned instances
of a representative into one denser cloud and substitute it back."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Component, ComponentSet, DataType, GeometryError, Model, RigidTransform
from .segmentation import _median_nn_distance, icp_align

# coverage voxels are this fraction of the model diagonal
COVERAGE_VOXEL_FRACTION = 0.01
# members are excluded when their alignment residual exceeds this multiple of
# the median member residual (floored at a fraction of the canonical diagonal)
RESIDUAL_MULTIPLE = 3.0
RESIDUAL_FLOOR_FRACTION = 0.02
# consensus bookkeeping voxel, in units of the median point spacing
HOLE_VOXEL_MULTIPLE = 5.0


class CompletionError(GeometryError):
    pass


@dataclass(frozen=True)
class ConsensusModel:
    """Merged cloud of all members of one label, in the medoid's local frame."""

    label_id: int
    merged_cloud: np.ndarray          # (n, 3) points in canonical frame
    canonical_id: int                 # medoid component id
    alignments: dict                  # component id -> RigidTransform world->canonical frame
    excluded: tuple = ()              # component ids dropped as outliers
    residuals: dict = field(default_factory=dict)
    voxel_size: float = 0.0
    dense_cloud: np.ndarray | None = None  # full aligned union, for hole filling

    def __post_init__(self):
        if len(self.merged_cloud) == 0:
            raise CompletionError("empty consensus cloud")


def _voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """One centroid per occupied voxel."""
    if voxel <= 0 or len(points) == 0:
        return points
    keys = np.floor(np.round(points / voxel, 6)).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    n_vox = inv.max() + 1
    sums = np.zeros((n_vox, 3))
    counts = np.zeros(n_vox)
    np.add.at(sums, inv, points)
    np.add.at(counts, inv, 1.0)
    return sums / counts[:, None]


def build_consensus(model: Model, members: list,
                    coverage_voxel: float | None = None) -> ConsensusModel:
    """ICP-align every member onto the medoid and merge the aligned points.

    The medoid minimizes total pairwise alignment residual; members whose
    own residual exceeds RESIDUAL_FRACTION of the medoid's diagonal are
    excluded and reported.
    """
    if not members:
        raise CompletionError("consensus needs at least one member")
    if model.kind != DataType.POINT_CLOUD:
        raise CompletionError("consensus completion applies to point clouds")
    clouds = {m.id: model.points[m.element_indices] for m in members}
    ids = sorted(clouds)
    if len(ids) == 1:
        only = members[0]
        local = only.local_frame.inverse().apply(clouds[only.id])
        spacing = _median_nn_distance(local)
        return ConsensusModel(
            label_id=only.id, merged_cloud=local, canonical_id=only.id,
            alignments={only.id: only.local_frame.inverse()},
            residuals={only.id: 0.0}, voxel_size=spacing,
        )
    # pairwise residuals for the medoid choice
    resid = {i: 0.0 for i in ids}
    pair: dict = {}
    for a in ids:
        for b in ids:
            if a == b:
                continue
            xf, r, _ = icp_align(clouds[a], clouds[b])
            pair[(a, b)] = (xf, r)
            resid[a] += r
    medoid = min(ids, key=lambda i: (resid[i], i))
    comp_by_id = {m.id: m for m in members}
    canon = comp_by_id[medoid]
    to_local = canon.local_frame.inverse()
    from .geometry import compose
    tree_med = cKDTree(clouds[medoid])

    def measured(xf: RigidTransform, i: int) -> float:
        d, _ = tree_med.query(xf.apply(clouds[i]))
        n_keep = max(3, int(round(0.8 * len(d))))
        return float(np.mean(np.sort(d)[:n_keep]))

    # direct ICP to the medoid can land in a bad local minimum when holes
    # bias the correspondences; also consider one-hop routes through every
    # other member and keep the alignment with the smallest measured residual
    best: dict = {}
    for i in ids:
        if i == medoid:
            continue
        options = [pair[(i, medoid)][0]]
        options += [compose(pair[(j, medoid)][0], pair[(i, j)][0])
                    for j in ids if j not in (i, medoid)]
        scored = [(measured(xf, i), n, xf) for n, xf in enumerate(options)]
        r, _, xf = min(scored, key=lambda t: (t[0], t[1]))
        best[i] = (xf, r)
    member_resid = [best[i][1] for i in ids if i != medoid]
    threshold = max(
        RESIDUAL_MULTIPLE * float(np.median(member_resid)),
        RESIDUAL_FLOOR_FRACTION * max(canon.bbox.diagonal, 1e-30),
    )
    alignments = {medoid: to_local}
    residuals = {medoid: 0.0}
    excluded = []
    merged = [to_local.apply(clouds[medoid])]
    for i in ids:
        if i == medoid:
            continue
        xf, r = best[i]
        if r > threshold:
            excluded.append(i)
            continue
        alignments[i] = compose(to_local, xf)
        residuals[i] = r
        merged.append(alignments[i].apply(clouds[i]))
    spacing = float(np.median([_median_nn_distance(clouds[i]) for i in alignments]))
    # large enough that a complete member occupies nearly every surface cell,
    # so occupied-cell counts are proportional to surface area
    voxel = HOLE_VOXEL_MULTIPLE * spacing
    dense = np.concatenate(merged)
    merged_cloud = _resample_to_member_density(merged, voxel, coverage_voxel)
    return ConsensusModel(
        label_id=canon.id, merged_cloud=merged_cloud, canonical_id=medoid,
        alignments=alignments, excluded=tuple(excluded),
        residuals=residuals, voxel_size=voxel, dense_cloud=dense,
    )


def _resample_to_member_density(member_clouds: list, voxel: float,
                                coverage_voxel: float | None = None) -> np.ndarray:
    """Subsample the aligned union so its density matches a single member.

    The target count scales the mean member count by the surface-area ratio
    union/member, estimated from occupied-voxel counts.  When a coverage
    voxel is given, subsampling is stratified: one point per coverage cell
    first, so the consensus keeps every cell the union occupies.
    """
    union = np.concatenate(member_clouds)
    # occupied-voxel counts are proportional to surface area at this cell size
    occ_union = len(occupied_voxels(union, voxel))
    occ_member = float(np.median([
        len(occupied_voxels(c, voxel)) for c in member_clouds
    ]))
    mean_count = float(np.mean([len(c) for c in member_clouds]))
    max_count = max(len(c) for c in member_clouds)
    target = max(int(round(mean_count * occ_union / max(occ_member, 1.0))), max_count)
    if len(union) <= target:
        return union
    rng = np.random.default_rng(0)
    forced = np.empty(0, dtype=np.intp)
    if coverage_voxel and coverage_voxel > 0:
        keys = np.floor(np.round(union / coverage_voxel, 6)).astype(np.int64)
        _, forced = np.unique(keys, axis=0, return_index=True)
    if len(forced) >= target:
        return union[np.sort(forced)]
    rest = np.setdiff1d(np.arange(len(union)), forced)
    extra = rng.choice(rest, size=target - len(forced), replace=False)
    return union[np.sort(np.concatenate([forced, extra]))]


def consensus_for_labels(components: ComponentSet) -> list:
    """One consensus model per label with >= 1 member."""
    by_label: dict = {}
    for comp in components.components:
        by_label.setdefault(components.labels[comp.id], []).append(comp)
    voxel = COVERAGE_VOXEL_FRACTION * components.model.diagonal
    return [build_consensus(components.model, members, coverage_voxel=voxel)
            for _, members in sorted(by_label.items())]


def apply_consensus(model: Model, components: ComponentSet, cms: list) -> Model:
    """Complete every aligned member with consensus points in its holes.

    Original points are kept verbatim (coverage is monotone by construction);
    consensus points are added only in voxels the member left empty.
    """
    if model.kind != DataType.POINT_CLOUD:
        raise CompletionError("consensus completion applies to point clouds")
    coverage_voxel = COVERAGE_VOXEL_FRACTION * max(model.diagonal, 1e-30)
    fills: dict = {}
    for cm in cms:
        spacing = cm.voxel_size / HOLE_VOXEL_MULTIPLE
        source = cm.dense_cloud if cm.dense_cloud is not None else cm.merged_cloud
        for comp_id, xf in cm.alignments.items():
            comp = next(c for c in components.components if c.id == comp_id)
            local_member = xf.apply(model.points[comp.element_indices])
            # a consensus point fills a hole when the member is locally sparse:
            # fewer than 3 member points within a few spacings, or none at all
            # nearby (the second clause catches thin strips at hole borders)
            k = min(3, len(local_member))
            d, _ = cKDTree(local_member).query(source, k=k)
            if d.ndim == 1:
                d = d[:, None]
            mask = (d[:, -1] > 4.0 * spacing) | (d[:, 0] > 3.0 * spacing)
            candidates = xf.inverse().apply(source[mask])
            if not len(candidates):
                continue
            # at most two fill points per coverage cell keeps the local
            # density near the original while covering every union cell
            keys = np.floor(np.round(candidates / coverage_voxel, 6)).astype(np.int64)
            _, inv = np.unique(keys, axis=0, return_inverse=True)
            order = np.argsort(inv, kind="stable")
            take = []
            seen: dict = {}
            for i in order:
                c = int(inv[i])
                if seen.get(c, 0) < 2:
                    seen[c] = seen.get(c, 0) + 1
                    take.append(i)
            fills[comp_id] = candidates[np.sort(np.array(take))]
    chunks = [model.points]
    for comp_id in sorted(fills):
        chunks.append(fills[comp_id])
    return Model(DataType.POINT_CLOUD, points=np.concatenate(chunks))


def occupied_voxels(points: np.ndarray, voxel: float) -> set:
    # rounding the ratio first keeps points that sit exactly on a voxel
    # boundary (e.g. axis-aligned box faces) in a stable cell under the
    # ~1e-14 noise of frame round trips
    keys = np.floor(np.round(np.asarray(points) / voxel, 6)).astype(np.int64)
    return {tuple(k) for k in np.unique(keys, axis=0)}


def _density_histogram(points: np.ndarray, scale: float, bins: int = 10) -> list:
    """Histogram of nearest-neighbor distances in units of 0.01*scale."""
    d, _ = cKDTree(points).query(points, k=2)
    counts, _ = np.histogram(d[:, 1], bins=bins, range=(0.0, 0.05 * scale))
    return [int(c) for c in counts]


def completion_stats(before: Model, after: Model, components=None) -> dict:
    """Point-count delta, voxel coverage delta, and a density warning flag.

    With the segmentation of `before` supplied, also reports per-label
    coverage: the fraction of each label's input voxels still occupied.
    """
    if before.kind != DataType.POINT_CLOUD or after.kind != DataType.POINT_CLOUD:
        raise CompletionError("completion stats require point clouds")
    voxel = COVERAGE_VOXEL_FRACTION * max(before.diagonal, 1e-30)
    vox_before = occupied_voxels(before.points, voxel)
    vox_after = occupied_voxels(after.points, voxel)
    n_before = len(before.points)
    n_after = len(after.points)
    d_before = _median_nn_distance(before.points)
    d_after = _median_nn_distance(after.points)
    per_label = {}
    if components is not None:
        by_label: dict = {}
        for comp in components.components:
            by_label.setdefault(components.labels[comp.id], []).append(comp)
        for label, members in sorted(by_label.items()):
            pts = np.concatenate([before.points[m.element_indices] for m in members])
            per_label[int(label)] = coverage_fraction(after.points, pts, voxel)
    return {
        "per_label_coverage": per_label,
        "density_histogram_before": _density_histogram(before.points, before.diagonal),
        "density_histogram_after": _density_histogram(after.points, before.diagonal),
        "points_before": n_before,
        "points_after": n_after,
        "point_gain_pct": 100.0 * (n_after - n_before) / max(n_before, 1),
        "voxels_before": len(vox_before),
        "voxels_after": len(vox_after),
        "voxels_lost": len(vox_before - vox_after),
        "voxel_size": voxel,
        "median_spacing_before": d_before,
        "median_spacing_after": d_after,
        # flag when the completed cloud is sparser than the input
        "density_warning": bool(d_after > 1.5 * max(d_before, 1e-30)),
    }


def coverage_fraction(points: np.ndarray, ground_truth: np.ndarray,
                      voxel: float) -> float:
    """Fraction of ground-truth-occupied voxels covered by `points`."""
    got = occupied_voxels(points, voxel)
    want = occupied_voxels(ground_truth, voxel)
    if not want:
        return 1.0
    return len(got & want) / len(want)
