"""Consensus completion: medoid merging, outlier exclusion, hole filling,
and the completion invariants (monotone coverage, near-idempotence)."""
from __future__ import annotations

import numpy as np
import pytest

from procgram.completion import (
    CompletionError,
    apply_consensus,
    build_consensus,
    completion_stats,
    consensus_for_labels,
    coverage_fraction,
    occupied_voxels,
)
from procgram.fixtures import ablated_instance_row, box_surface_cloud
from procgram.geometry import DataType, Model
from procgram.segmentation import ShapeParams, segment

ROW_SHAPE = ShapeParams(theta_num=6, theta_geo=0.5)


@pytest.fixture(scope="module")
def row_case():
    model, base, slices = ablated_instance_row(seed=0)
    components = segment(model, ROW_SHAPE, seed=0)
    return model, base, slices, components


@pytest.fixture(scope="module")
def completed_row(row_case):
    model, _, _, components = row_case
    cms = consensus_for_labels(components)
    return apply_consensus(model, components, cms), cms


class TestBuildConsensus:
    def test_merged_cloud_at_least_largest_member(self, row_case):
        model, _, _, components = row_case
        cms = consensus_for_labels(components)
        assert len(cms) == 1
        cm = cms[0]
        biggest = max(len(c.element_indices) for c in components.components)
        assert len(cm.merged_cloud) >= biggest

    def test_alignments_cover_members(self, row_case):
        _, _, _, components = row_case
        cm = consensus_for_labels(components)[0]
        ids = {c.id for c in components.components}
        assert set(cm.alignments) | set(cm.excluded) == ids
        assert cm.canonical_id in cm.alignments

    def test_single_member_passthrough(self):
        pts = box_surface_cloud(300, seed=0)
        m = Model(DataType.POINT_CLOUD, points=pts)
        cs = segment(m, ShapeParams(theta_num=1), seed=0)
        cm = build_consensus(m, list(cs.components))
        assert len(cm.merged_cloud) == 300
        assert cm.excluded == ()

    def test_gross_outlier_member_excluded(self):
        rng = np.random.default_rng(5)
        base = box_surface_cloud(400, seed=0)
        copies = [base + np.array([k * 3.0, 0.0, 0.0]) for k in range(4)]
        # a blob of the same point count but a very different shape
        blob = rng.normal(scale=0.2, size=(400, 3)) + np.array([12.0, 0.0, 0.5])
        m = Model(DataType.POINT_CLOUD, points=np.concatenate(copies + [blob]))
        cs = segment(m, ShapeParams(theta_num=5, theta_geo=0.1), seed=0)
        assert cs.n_components == 5
        cm = build_consensus(m, list(cs.components))
        assert len(cm.excluded) == 1

    def test_empty_members_rejected(self, row_case):
        model = row_case[0]
        with pytest.raises(CompletionError):
            build_consensus(model, [])

    def test_mesh_rejected(self):
        from procgram.fixtures import unit_cube_mesh
        with pytest.raises(CompletionError):
            build_consensus(unit_cube_mesh(), [object()])


class TestApplyConsensus:
    def test_originals_kept_verbatim(self, row_case, completed_row):
        model = row_case[0]
        after, _ = completed_row
        assert np.array_equal(after.points[: len(model.points)], model.points)

    def test_coverage_monotone(self, row_case, completed_row):
        model = row_case[0]
        after, _ = completed_row
        stats = completion_stats(model, after)
        assert stats["voxels_lost"] == 0
        assert stats["voxels_after"] >= stats["voxels_before"]

    def test_members_complete_against_ground_truth(self, row_case, completed_row):
        """Every ablated member recovers >= 95% of the full instance."""
        model, base, slices, _ = row_case
        after, _ = completed_row
        voxel = 0.01 * model.diagonal
        for k in range(len(slices)):
            truth = base + np.array([k * 2.5, 0.0, 0.0])
            assert coverage_fraction(after.points, truth, voxel) >= 0.95

    def test_point_gain_moderate(self, row_case, completed_row):
        model = row_case[0]
        after, _ = completed_row
        gain = completion_stats(model, after)["point_gain_pct"]
        assert 15.0 <= gain <= 30.0

    def test_near_idempotent(self, row_case, completed_row):
        """Completing an already-completed cloud adds < 1% more points."""
        _, _, _, components = row_case
        after, _ = completed_row
        comps2 = segment(after, ROW_SHAPE, seed=0)
        again = apply_consensus(after, comps2, consensus_for_labels(comps2))
        regain = (len(again.points) - len(after.points)) / len(after.points)
        assert regain < 0.01

    def test_mesh_rejected(self, row_case):
        from procgram.fixtures import unit_cube_mesh
        _, _, _, components = row_case
        with pytest.raises(CompletionError):
            apply_consensus(unit_cube_mesh(), components, [])


class TestStats:
    def test_counts_and_flags(self, row_case, completed_row):
        model, _, _, components = row_case
        after, _ = completed_row
        stats = completion_stats(model, after, components=components)
        assert stats["points_after"] > stats["points_before"]
        assert not stats["density_warning"]
        assert set(stats["per_label_coverage"]) == set(components.labels.values())
        for cov in stats["per_label_coverage"].values():
            assert cov >= 0.95
        assert len(stats["density_histogram_before"]) == 10
        assert len(stats["density_histogram_after"]) == 10
        assert sum(stats["density_histogram_after"]) >= sum(
            stats["density_histogram_before"])

    def test_density_warning_on_sparsified_cloud(self):
        pts = box_surface_cloud(800, seed=2)
        before = Model(DataType.POINT_CLOUD, points=pts)
        after = Model(DataType.POINT_CLOUD, points=pts[::8])
        stats = completion_stats(before, after)
        assert stats["density_warning"]

    def test_mesh_rejected(self):
        from procgram.fixtures import unit_cube_mesh
        with pytest.raises(CompletionError):
            completion_stats(unit_cube_mesh(), unit_cube_mesh())


class TestVoxelHelpers:
    def test_occupied_voxels_boundary_stable(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        jittered = pts + 1e-14
        assert occupied_voxels(pts, 0.5) == occupied_voxels(jittered, 0.5)

    def test_coverage_fraction_bounds(self):
        pts = box_surface_cloud(200, seed=0)
        assert coverage_fraction(pts, pts, 0.05) == 1.0
        assert coverage_fraction(pts[:10], pts, 0.05) < 1.0
        assert coverage_fraction(pts, np.empty((0, 3)), 0.05) == 1.0
