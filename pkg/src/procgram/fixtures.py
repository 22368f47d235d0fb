"""Synthetic architectural fixtures used by tests, benchmarks, and demos.

All generators are deterministic given their arguments (and seed, where
randomness is involved).
"""
from __future__ import annotations

import numpy as np

from .geometry import DataType, GeometryError, Model

# Gaps separating panes from the frame and from each other.  Small enough
# to read as "zero spacing", large enough to keep connected components apart.
PANE_FRAME_GAP = 1e-7
PANE_PANE_GAP = 2e-7


def quad(p0, p1, p2, p3) -> np.ndarray:
    """Two triangles covering the quad p0-p1-p2-p3 (counter-clockwise)."""
    p0, p1, p2, p3 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2, p3))
    return np.array([[p0, p1, p2], [p0, p2, p3]])


def box_mesh(min_point, max_point) -> np.ndarray:
    """12 triangles of an axis-aligned box, as an (12, 3, 3) array."""
    lo = np.asarray(min_point, dtype=np.float64)
    hi = np.asarray(max_point, dtype=np.float64)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    faces = [
        quad((x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0)),  # z = z0
        quad((x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1)),  # z = z1
        quad((x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0)),  # y = y0
        quad((x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1)),  # y = y1
        quad((x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1)),  # x = x0
        quad((x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0)),  # x = x1
    ]
    return np.concatenate(faces)


def unit_cube_mesh() -> Model:
    return Model(DataType.MESH, triangles=box_mesh((0, 0, 0), (1, 1, 1)))


def flat_quad(x0, y0, x1, y1, z) -> np.ndarray:
    return quad((x0, y0, z), (x1, y0, z), (x1, y1, z), (x0, y1, z))


def window_cell(width: float = 0.6, height: float = 0.8, border: float = 0.1,
                with_panes: bool = True) -> Model:
    """A window: rectangular frame ring, optionally holding 2x2 panes.

    Everything lies in the z=0 plane with the frame's min corner at the
    origin.  Panes sit inside the frame opening at (near-)zero spacing.
    """
    w, h, b = width, height, border
    tris = [
        flat_quad(0, 0, w, b, 0.0),          # bottom bar
        flat_quad(0, h - b, w, h, 0.0),      # top bar
        flat_quad(0, b, b, h - b, 0.0),      # left bar
        flat_quad(w - b, b, w, h - b, 0.0),  # right bar
    ]
    if with_panes:
        g1, g2 = PANE_FRAME_GAP, PANE_PANE_GAP
        ox, oy = b + g1, b + g1  # opening corner inset by the frame gap
        pw = (w - 2 * b - 2 * g1 - g2) / 2
        ph = (h - 2 * b - 2 * g1 - g2) / 2
        for i in range(2):
            for j in range(2):
                px = ox + j * (pw + g2)
                py = oy + i * (ph + g2)
                tris.append(flat_quad(px, py, px + pw, py + ph, 0.0))
    return Model(DataType.MESH, triangles=np.concatenate(tris))


def plain_window_cell(width: float = 0.6, height: float = 0.8) -> Model:
    """A window reduced to a single quad (no frame, no panes)."""
    return Model(DataType.MESH, triangles=flat_quad(0, 0, width, height, 0.0))


def generate_grid_model(rows: int, cols: int, cell: Model, spacing=(0.3, 0.3, 0.0),
                        seed: int = 0) -> Model:
    """rows x cols translated copies of `cell` in front of a backing wall slab.

    `spacing` is the gap between adjacent cell bounding boxes per axis.
    """
    if rows < 1 or cols < 1:
        raise GeometryError("grid dimensions must be >= 1")
    if cell.kind != DataType.MESH:
        raise GeometryError("grid cell must be a mesh")
    spacing = np.asarray(spacing, dtype=np.float64)
    ext = cell.bbox.extents
    pitch_x = ext[0] + spacing[0]
    pitch_y = ext[1] + spacing[1]
    margin = 0.25 * max(ext[0], ext[1])
    cell_local = cell.triangles - cell.bbox.min_point  # min corner at origin
    tris = []
    for i in range(rows):
        for j in range(cols):
            off = np.array([margin + j * pitch_x, margin + i * pitch_y, 0.0])
            tris.append(cell_local + off)
    wall_w = 2 * margin + cols * ext[0] + (cols - 1) * spacing[0]
    wall_h = 2 * margin + rows * ext[1] + (rows - 1) * spacing[1]
    depth = max(ext[2], 0.05 * max(ext[0], ext[1]))
    wall = box_mesh((0.0, 0.0, -depth), (wall_w, wall_h, 0.5 * depth + ext[2]))
    tris.append(wall)
    return Model(DataType.MESH, triangles=np.concatenate(tris))


def displace_vertices(model: Model, rho: float, seed: int = 0) -> Model:
    """Move every mesh vertex by a random offset of magnitude in (0, rho*D].

    Shared vertices (identical coordinates) move together, preserving
    topology.  rho=0 returns the model unchanged.
    """
    if model.kind != DataType.MESH:
        raise GeometryError("vertex displacement applies to mesh models only")
    if rho < 0:
        raise GeometryError("rho must be >= 0")
    if rho == 0:
        return model
    verts = model.triangles.reshape(-1, 3)
    rounded = np.round(verts, 9)
    uniq, inverse = np.unique(rounded, axis=0, return_inverse=True)
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(len(uniq), 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    # magnitude uniform on (0, rho*D]; sample in [0,1) and flip to (0,1]
    mags = (1.0 - rng.random(len(uniq))) * rho * model.diagonal
    offsets = directions * mags[:, None]
    displaced = verts + offsets[inverse]
    return Model(DataType.MESH, triangles=displaced.reshape(-1, 3, 3))


def ablated_grid_model(rows: int = 3, cols: int = 2, jitter: float = 0.005,
                       seed: int = 11) -> Model:
    """Pane-window grid with one window's vertices mildly jittered.

    The perturbed window stays recognizable under a relaxed similarity
    threshold but breaks strict-threshold labeling.
    """
    cell = window_cell()
    model = generate_grid_model(rows, cols, cell, spacing=(0.3, 0.3, 0.0), seed=seed)
    tris = np.array(model.triangles)
    n_cell = cell.n_elements
    # perturb the first cell's triangles coherently per unique vertex
    target = tris[:n_cell]
    verts = target.reshape(-1, 3)
    rounded = np.round(verts, 9)
    uniq, inverse = np.unique(rounded, axis=0, return_inverse=True)
    rng = np.random.default_rng(seed)
    offsets = rng.normal(size=(len(uniq), 3))
    offsets /= np.linalg.norm(offsets, axis=1)[:, None]
    offsets *= jitter * cell.diagonal
    tris[:n_cell] = (verts + offsets[inverse]).reshape(-1, 3, 3)
    return Model(DataType.MESH, triangles=tris)


def mixed_grid_model(rows: int = 2, cols: int = 3, seed: int = 0) -> Model:
    """Grid with two window sizes (alternating columns), both with panes."""
    small = window_cell(0.6, 0.8)
    large = window_cell(0.9, 1.1, border=0.15)
    pitch = np.array([1.3, 1.5, 0.0])
    margin = 0.3
    tris = []
    for i in range(rows):
        for j in range(cols):
            cell = small if j % 2 == 0 else large
            off = np.array([margin + j * pitch[0], margin + i * pitch[1], 0.0])
            tris.append(cell.triangles - cell.bbox.min_point + off)
    wall_w = 2 * margin + cols * pitch[0]
    wall_h = 2 * margin + rows * pitch[1]
    wall = box_mesh((0.0, 0.0, -0.08), (wall_w, wall_h, 0.04))
    tris.append(wall)
    return Model(DataType.MESH, triangles=np.concatenate(tris))


def _ngon_prism(n: int, radius: float, z0: float, z1: float) -> np.ndarray:
    """Triangulated n-gon prism centered on the z-axis."""
    ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    tris = []
    c0 = np.array([0.0, 0.0, z0])
    c1 = np.array([0.0, 0.0, z1])
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        a0 = np.array([a[0], a[1], z0])
        b0 = np.array([b[0], b[1], z0])
        a1 = np.array([a[0], a[1], z1])
        b1 = np.array([b[0], b[1], z1])
        tris.append([c0, b0, a0])
        tris.append([c1, a1, b1])
        tris.append([a0, b0, b1])
        tris.append([a0, b1, a1])
    return np.array(tris)


def tower_model(floors: int = 5, step_deg: float = 45.0, pitch: float = 1.0) -> Model:
    """Tower of identical stacked slabs plus one helical fin per floor.

    Slabs repeat by pure vertical translation; fins repeat by a rotation
    of `step_deg` about the z axis per floor (plus the same vertical
    pitch), giving the fixture both a translational and a rotational
    pattern.
    """
    slab = _ngon_prism(16, 1.0, 0.0, 0.1)
    theta = np.deg2rad(step_deg)
    # irregular quad: asymmetry keeps the PCA frame equivariant under rotation
    fin = quad((1.05, -0.08, 0.30), (1.35, -0.05, 0.33), (1.33, 0.08, 0.68), (1.07, 0.06, 0.74))
    tris = []
    for k in range(floors):
        dz = np.array([0.0, 0.0, k * pitch])
        tris.append(slab + dz)
        c, s = np.cos(k * theta), np.sin(k * theta)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        tris.append(fin @ R.T + dz)
    return Model(DataType.MESH, triangles=np.concatenate(tris))


def rotor_model(n_fins: int = 6, step_deg: float = 30.0) -> Model:
    """Central hub with `n_fins` copies of an asymmetric fin placed on a
    uniform circular arrangement about the z axis (zero pitch)."""
    hub = _ngon_prism(12, 0.6, 0.0, 0.1)
    fin = quad((1.05, -0.08, 0.0), (1.35, -0.05, 0.03), (1.33, 0.08, 0.38), (1.07, 0.06, 0.44))
    theta = np.deg2rad(step_deg)
    tris = [hub]
    for k in range(n_fins):
        c, s = np.cos(k * theta), np.sin(k * theta)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        tris.append(fin @ R.T)
    return Model(DataType.MESH, triangles=np.concatenate(tris))


def box_surface_cloud(n: int = 600, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                      seed: int = 0) -> np.ndarray:
    """Uniform random sample of an axis-aligned box surface, as (n, 3)."""
    size = np.asarray(size, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    areas = np.array([size[1] * size[2], size[1] * size[2],
                      size[0] * size[2], size[0] * size[2],
                      size[0] * size[1], size[0] * size[1]])
    rng = np.random.default_rng(seed)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.random((n, 2))
    pts = np.empty((n, 3))
    for i in range(n):
        axis = face[i] // 2
        side = face[i] % 2
        others = [a for a in range(3) if a != axis]
        pts[i, axis] = side * size[axis]
        pts[i, others[0]] = u[i, 0] * size[others[0]]
        pts[i, others[1]] = u[i, 1] * size[others[1]]
    return pts + origin


def sphere_surface_cloud(n: int = 600, radius: float = 0.5, center=(0.5, 0.5, 0.5),
                         seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * radius + np.asarray(center, dtype=np.float64)


def two_cluster_cloud(separation: float = 4.0, n: int = 500, seed: int = 0) -> Model:
    """Two congruent box-surface clouds separated along x."""
    base = box_surface_cloud(n, seed=seed)
    other = base + np.array([separation, 0.0, 0.0])
    return Model(DataType.POINT_CLOUD, points=np.concatenate([base, other]))


def ablated_instance_row(instances: int = 6, n: int = 600, ablate: float = 0.2,
                         pitch: float = 2.5, seed: int = 0):
    """Row of copies of one box-surface cloud, each missing an azimuth sector.

    Sector centers are evenly spread so the union of the copies covers the
    whole surface.  Returns (model, ground_truth_points, member_slices).
    """
    base = box_surface_cloud(n, seed=seed)
    center = base.mean(axis=0)
    azim = np.arctan2(base[:, 1] - center[1], base[:, 0] - center[0])  # (-pi, pi]
    frac = (azim + np.pi) / (2 * np.pi)
    clouds = []
    slices = []
    start = 0
    for k in range(instances):
        lo = k / instances
        hi = lo + ablate
        inside = (frac >= lo) & (frac < hi)
        if hi > 1.0:
            inside |= frac < hi - 1.0
        keep = base[~inside] + np.array([k * pitch, 0.0, 0.0])
        clouds.append(keep)
        slices.append(slice(start, start + len(keep)))
        start += len(keep)
    model = Model(DataType.POINT_CLOUD, points=np.concatenate(clouds))
    return model, base, slices
