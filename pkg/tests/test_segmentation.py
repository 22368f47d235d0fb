"""Segmentation and similarity labeling: component counts, similarity
metrics, ICP registration, and the module invariants."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procgram.fixtures import (
    box_surface_cloud,
    generate_grid_model,
    mixed_grid_model,
    plain_window_cell,
    sphere_surface_cloud,
    two_cluster_cloud,
    window_cell,
)
from procgram.geometry import DataType, Model, RigidTransform
from procgram.segmentation import (
    SegmentationError,
    ShapeParams,
    cloud_similarity,
    icp_align,
    mesh_similarity,
    segment,
    segment_cloud,
    segment_mesh,
)


@pytest.fixture(scope="module")
def plain_grid():
    return generate_grid_model(3, 2, plain_window_cell(), seed=0)


@pytest.fixture(scope="module")
def plain_grid_components(plain_grid):
    return segment(plain_grid, ShapeParams(), seed=0)


class TestSegmentMesh:
    def test_grid_counts(self, plain_grid_components):
        """Wall + 6 congruent windows under default parameters."""
        assert plain_grid_components.n_components == 7
        assert plain_grid_components.n_labels == 2

    def test_1x1_grid(self):
        m = generate_grid_model(1, 1, plain_window_cell(), seed=0)
        cs = segment(m, ShapeParams(), seed=0)
        assert cs.n_components == 2
        assert cs.n_labels == 2

    def test_pane_grid_counts(self, grid32):
        cs = segment(grid32, ShapeParams(), seed=0)
        # wall + 6 frames + 24 panes in 3 similarity groups
        assert cs.n_components == 31
        assert cs.n_labels == 3

    def test_single_triangle(self):
        tri = Model(DataType.MESH,
                    triangles=np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float))
        cs = segment(tri, ShapeParams(), seed=0)
        assert cs.n_components == 1
        assert cs.n_labels == 1

    def test_scaled_window_gets_own_label(self):
        cell = plain_window_cell()
        model = generate_grid_model(3, 2, cell, seed=0)
        tris = np.array(model.triangles)
        # scale the first window 2x about its own center
        n_cell = cell.n_elements
        target = tris[:n_cell].reshape(-1, 3)
        c = target.mean(axis=0)
        tris[:n_cell] = (c + 2.0 * (target - c)).reshape(-1, 3, 3)
        cs = segment(Model(DataType.MESH, triangles=tris), ShapeParams(), seed=0)
        assert cs.n_labels == 3  # wall, scaled window, regular windows

    def test_element_partition(self, plain_grid, plain_grid_components):
        cs = plain_grid_components
        seen = np.concatenate([c.element_indices for c in cs.components])
        seen = np.concatenate([seen, np.asarray(cs.noise_indices, dtype=seen.dtype)])
        assert sorted(seen.tolist()) == list(range(plain_grid.n_elements))

    def test_determinism(self, plain_grid):
        a = segment(plain_grid, ShapeParams(), seed=3)
        b = segment(plain_grid, ShapeParams(), seed=3)
        assert a.n_components == b.n_components
        assert all(np.array_equal(x.element_indices, y.element_indices)
                   for x, y in zip(a.components, b.components))
        assert a.labels == b.labels

    def test_relaxing_theta_geo_never_adds_labels(self):
        model = mixed_grid_model()
        last = None
        for geo in (0.999, 0.99, 0.9, 0.5, 0.1):
            n = segment(model, ShapeParams(theta_geo=geo), seed=0).n_labels
            if last is not None:
                assert n <= last
            last = n

    def test_label_transitivity_to_group_representative(self, plain_grid,
                                                        plain_grid_components):
        cs = plain_grid_components
        params = ShapeParams()
        by_label: dict = {}
        for comp in cs.components:
            by_label.setdefault(cs.labels[comp.id], []).append(comp)
        for members in by_label.values():
            rep = members[0]
            for other in members[1:]:
                s = mesh_similarity(rep, other, plain_grid, params)
                assert s.value >= params.theta_geo


class TestSegmentCloud:
    def test_two_clusters(self):
        m = two_cluster_cloud()
        cs = segment_cloud(m, ShapeParams(theta_num=2), seed=0)
        assert cs.n_components == 2
        assert cs.n_labels == 1

    def test_uniform_sphere(self):
        m = Model(DataType.POINT_CLOUD, points=sphere_surface_cloud(400))
        cs = segment_cloud(m, ShapeParams(theta_num=1), seed=0)
        assert cs.n_components == 1

    def test_outliers_land_in_noise(self):
        rng = np.random.default_rng(0)
        base = box_surface_cloud(400, seed=0)
        outliers = rng.uniform(-6, 6, size=(20, 3))
        m = Model(DataType.POINT_CLOUD,
                  points=np.concatenate([base, outliers]))
        cs = segment_cloud(m, ShapeParams(theta_num=1, theta_den=8.0), seed=0)
        # scattered far-away singletons cannot form dense clusters
        assert len(cs.noise_indices) >= 15
        kept = {i for c in cs.components for i in c.element_indices}
        assert set(range(400)) <= kept


class TestMeshSimilarity:
    def test_translated_copies_near_identical(self, plain_grid,
                                              plain_grid_components):
        cs = plain_grid_components
        windows = [c for c in cs.components if c.n_elements == 2]
        wall = [c for c in cs.components if c.n_elements == 12]
        a, b = windows[0], windows[1]
        assert mesh_similarity(a, b, plain_grid, ShapeParams()).value >= 0.999
        assert mesh_similarity(a, wall[0], plain_grid, ShapeParams()).value < 0.5

    def test_rotated_window_still_matches(self):
        cell = window_cell()
        tris = cell.triangles
        c = tris.reshape(-1, 3).mean(axis=0)
        R = RigidTransform.from_axis_angle((0, 0, 1), np.pi)
        rotated = R.apply(tris.reshape(-1, 3) - c).reshape(-1, 3, 3) + c + [5, 0, 0]
        model = Model(DataType.MESH,
                      triangles=np.concatenate([tris, rotated]))
        cs = segment(model, ShapeParams(), seed=0)
        groups: dict = {}
        for comp in cs.components:
            groups.setdefault(cs.labels[comp.id], 0)
            groups[cs.labels[comp.id]] += 1
        # parts pair with their rotated twins: 2 frames in one label,
        # all 8 panes (4 per window) in the other
        assert sorted(groups.values()) == [2, 8]

    def test_symmetry(self, plain_grid, plain_grid_components):
        cs = plain_grid_components
        a, b = cs.components[0], cs.components[1]
        ab = mesh_similarity(a, b, plain_grid, ShapeParams()).value
        ba = mesh_similarity(b, a, plain_grid, ShapeParams()).value
        assert abs(ab - ba) < 1e-9


class TestCloudSimilarity:
    def _component_pair(self, model):
        cs = segment_cloud(model, ShapeParams(theta_num=2), seed=0)
        assert cs.n_components == 2
        return cs.components[0], cs.components[1], model

    def test_rigidly_moved_copy(self):
        a, b, m = self._component_pair(two_cluster_cloud())
        assert cloud_similarity(a, b, m, ShapeParams()).value >= 0.99

    def test_subsampled_copy_still_matches(self):
        base = box_surface_cloud(500, seed=0)
        rng = np.random.default_rng(1)
        keep = rng.choice(len(base), size=400, replace=False)
        sub = base[np.sort(keep)] + np.array([4.0, 0.0, 0.0])
        m = Model(DataType.POINT_CLOUD, points=np.concatenate([base, sub]))
        a, b, m = self._component_pair(m)
        assert cloud_similarity(a, b, m, ShapeParams()).value >= 0.9

    def test_cube_vs_sphere(self):
        cube = box_surface_cloud(400, seed=0)
        sphere = sphere_surface_cloud(400, radius=0.5,
                                      center=(4.5, 0.5, 0.5), seed=0)
        m = Model(DataType.POINT_CLOUD, points=np.concatenate([cube, sphere]))
        a, b, m = self._component_pair(m)
        assert cloud_similarity(a, b, m, ShapeParams()).value < 0.5

    def test_symmetry(self):
        a, b, m = self._component_pair(two_cluster_cloud())
        ab = cloud_similarity(a, b, m, ShapeParams()).value
        ba = cloud_similarity(b, a, m, ShapeParams()).value
        assert abs(ab - ba) < 1e-9


class TestIcp:
    def test_identity(self):
        pts = box_surface_cloud(200, seed=0)
        xf, residual, converged = icp_align(pts, pts)
        assert converged
        assert residual == pytest.approx(0.0, abs=1e-9)
        assert xf.is_identity(tol=1e-6)

    def test_translation_recovery(self):
        pts = box_surface_cloud(200, seed=0)
        xf, residual, _ = icp_align(pts, pts + np.array([1.0, 2.0, 3.0]))
        assert np.allclose(xf.translation, [1.0, 2.0, 3.0], atol=1e-6)
        assert residual < 1e-9

    @given(st.floats(-0.5, 0.5), st.integers(0, 20))
    @settings(max_examples=15, deadline=None)
    def test_rotation_recovery(self, angle, seed):
        from procgram.geometry import rotation_angle
        pts = box_surface_cloud(200, seed=seed)
        pts = pts - pts.mean(axis=0)
        R = RigidTransform.from_axis_angle((0, 0, 1), angle)
        xf, residual, _ = icp_align(pts, R.apply(pts))
        assert residual < 1e-6
        assert rotation_angle(xf.rotation) == pytest.approx(abs(angle), abs=1e-4)

    def test_collinear_rejected(self):
        line = np.linspace(0, 1, 30)[:, None] * np.array([1.0, 0.0, 0.0])
        with pytest.raises(SegmentationError):
            icp_align(line, line)


class TestDegenerate:
    def test_coincident_elements_single_component(self):
        pts = np.zeros((10, 3)) + 0.5
        m = Model(DataType.POINT_CLOUD, points=pts + 1e-12)
        cs = segment(m, ShapeParams(), seed=0)
        assert cs.n_components == 1
        assert cs.degenerate
