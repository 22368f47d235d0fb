"""Synthetic fixture generators: counts, determinism, displacement bounds."""
from __future__ import annotations

import numpy as np
import pytest

from procgram.fixtures import (
    ablated_grid_model,
    ablated_instance_row,
    box_surface_cloud,
    displace_vertices,
    generate_grid_model,
    mixed_grid_model,
    plain_window_cell,
    tower_model,
    two_cluster_cloud,
    unit_cube_mesh,
    window_cell,
)
from procgram.geometry import DataType, GeometryError


class TestGridModel:
    def test_grid_copy_count_by_bbox_matching(self):
        """Oracle: every cell copy's bbox appears exactly once in the grid."""
        cell = window_cell()
        model = generate_grid_model(3, 2, cell, seed=0)
        n_cell = cell.n_elements
        # cells are appended first, wall last
        assert model.n_elements == 6 * n_cell + 12
        ext = cell.bbox.extents
        mins = []
        for k in range(6):
            tris = model.triangles[k * n_cell:(k + 1) * n_cell]
            lo = tris.reshape(-1, 3).min(axis=0)
            hi = tris.reshape(-1, 3).max(axis=0)
            assert np.allclose(hi - lo, ext, atol=1e-9)
            mins.append(np.round(lo, 9))
        # all placements distinct and lattice-aligned
        assert len({tuple(m) for m in mins}) == 6
        xs = sorted({m[0] for m in mins})
        ys = sorted({m[1] for m in mins})
        assert len(xs) == 2 and len(ys) == 3
        assert np.allclose(np.diff(xs), ext[0] + 0.3, atol=1e-9)
        assert np.allclose(np.diff(ys), ext[1] + 0.3, atol=1e-9)

    def test_1x1_grid_is_wall_plus_cell(self):
        cell = plain_window_cell()
        model = generate_grid_model(1, 1, cell, seed=0)
        assert model.n_elements == cell.n_elements + 12

    def test_10x10_quad_grid_counts(self):
        cell = plain_window_cell()
        model = generate_grid_model(10, 10, cell, seed=0)
        assert model.n_elements == 100 * 2 + 12

    def test_invalid_dims_rejected(self):
        with pytest.raises(GeometryError):
            generate_grid_model(0, 2, window_cell())

    def test_deterministic(self):
        a = generate_grid_model(2, 2, window_cell(), seed=5)
        b = generate_grid_model(2, 2, window_cell(), seed=5)
        assert np.array_equal(a.triangles, b.triangles)


class TestDisplaceVertices:
    def test_rho_zero_is_identity(self):
        cube = unit_cube_mesh()
        assert displace_vertices(cube, 0.0, seed=7) is cube

    def test_offsets_bounded_and_all_moved(self):
        cube = unit_cube_mesh()
        out = displace_vertices(cube, 0.001, seed=7)
        diff = np.linalg.norm(
            (out.triangles - cube.triangles).reshape(-1, 3), axis=1)
        assert diff.max() <= 0.001 * cube.diagonal + 1e-12
        assert (diff > 0).all()

    def test_topology_preserved(self):
        cube = unit_cube_mesh()
        out = displace_vertices(cube, 0.01, seed=7)
        assert out.n_elements == cube.n_elements
        # shared vertices moved together: unique vertex count unchanged
        n_uniq = len(np.unique(np.round(cube.triangles.reshape(-1, 3), 9), axis=0))
        n_uniq_out = len(np.unique(np.round(out.triangles.reshape(-1, 3), 9), axis=0))
        assert n_uniq_out == n_uniq

    def test_cloud_rejected(self):
        from procgram.geometry import Model
        cloud = Model(DataType.POINT_CLOUD, points=box_surface_cloud(10))
        with pytest.raises(GeometryError):
            displace_vertices(cloud, 0.01)


class TestOtherFixtures:
    def test_tower_element_count(self):
        t = tower_model(floors=5)
        # 16-gon prism slab has 64 triangles; fin quad has 2
        assert t.n_elements == 5 * (64 + 2)

    def test_mixed_grid_has_two_cell_sizes(self):
        m = mixed_grid_model()
        assert m.kind == DataType.MESH

    def test_two_cluster_cloud_split(self):
        m = two_cluster_cloud()
        assert m.n_elements == 1000
        left = m.points[:500]
        right = m.points[500:]
        assert np.allclose(right - left, [4.0, 0.0, 0.0])

    def test_ablated_grid_perturbs_one_cell_only(self):
        clean = generate_grid_model(3, 2, window_cell(), seed=11)
        ablated = ablated_grid_model(seed=11)
        n_cell = window_cell().n_elements
        assert not np.allclose(clean.triangles[:n_cell], ablated.triangles[:n_cell])
        assert np.array_equal(clean.triangles[n_cell:], ablated.triangles[n_cell:])

    def test_ablated_row_union_covers_base(self):
        model, base, slices = ablated_instance_row(seed=0)
        assert len(slices) == 6
        # each member is missing roughly the ablation fraction
        for k, sl in enumerate(slices):
            member = model.points[sl] - np.array([k * 2.5, 0.0, 0.0])
            frac = 1.0 - len(member) / len(base)
            assert 0.1 < frac < 0.3
        # union of de-translated members restores every base point
        union = np.concatenate([
            model.points[sl] - np.array([k * 2.5, 0.0, 0.0])
            for k, sl in enumerate(slices)])
        assert {tuple(np.round(p, 9)) for p in base} <= {
            tuple(np.round(p, 9)) for p in union}
