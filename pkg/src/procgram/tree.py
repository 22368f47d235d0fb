"""Instance tree: containment hierarchy of components with rigid-transform
edges, subtree similarity, label refinement, and join canonicalization.

Node labels use a reserved scheme: 0 is the synthetic/root-spanning label,
content labels are the segmentation labels shifted by +1, and -1 marks
intermediate nodes that carry no geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoundingBox,
    ComponentSet,
    GeometryError,
    Model,
    RigidTransform,
    compose,
)

SYNTHETIC_LABEL = 0
NO_LABEL = -1


class TreeError(GeometryError):
    pass


@dataclass(frozen=True)
class TreeParams:
    """Subtree-similarity thresholds steered by the guidance loop."""

    theta_sub: float = 0.999  # BFS structure match strictness
    theta_sym: float = 0.999  # child-label match strictness
    theta_ele: float = 0.05   # relative element-count tolerance
    theta_box: float = 0.05   # relative bbox-extent tolerance

    BOUNDS = {
        "theta_sub": (0.0, 1.0),
        "theta_sym": (0.0, 1.0),
        "theta_ele": (0.0, 1.0),
        "theta_box": (0.0, 1.0),
    }

    def __post_init__(self):
        for name, (lo, hi) in self.BOUNDS.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside bounds [{lo}, {hi}]")


@dataclass
class TreeNode:
    id: int
    label: int
    bbox: BoundingBox
    frame: RigidTransform          # world placement of the node's local space
    component_id: int | None = None
    n_elements: int = 0
    parent: int | None = None
    edge: RigidTransform | None = None  # frame relative to parent
    children: list = field(default_factory=list)
    flagged: bool = False          # attachment fell back to the center rule
    local_bbox: BoundingBox | None = None  # geometry AABB in the local frame

    @property
    def local_extents(self) -> np.ndarray:
        bb = self.local_bbox if self.local_bbox is not None else self.bbox
        return bb.extents


@dataclass(frozen=True)
class RepresentativeInstance:
    """Canonical subtree standing for all members of one label."""

    label: int
    member_ids: tuple
    canonical_id: int              # medoid member node
    application_roots: tuple       # distinct parent node ids of the members
    flagged: bool = False


class InstanceTree:
    """Single-writer mutable tree; queries are read-only."""

    def __init__(self, model: Model, component_set=None):
        self.model = model
        self.component_set = component_set  # source components, for geometry payloads
        self.nodes: dict[int, TreeNode] = {}
        self.root_id: int | None = None
        self._next_id = 0

    # -- construction -------------------------------------------------------

    def new_node(self, label: int, bbox: BoundingBox, frame: RigidTransform,
                 component_id=None, n_elements=0, local_bbox=None) -> TreeNode:
        node = TreeNode(self._next_id, label, bbox, frame, component_id, n_elements,
                        local_bbox=local_bbox)
        self.nodes[node.id] = node
        self._next_id += 1
        return node

    def attach(self, child: TreeNode, parent: TreeNode) -> None:
        child.parent = parent.id
        child.edge = compose(parent.frame.inverse(), child.frame)
        parent.children.append(child.id)

    def detach(self, child: TreeNode) -> None:
        parent = self.nodes[child.parent]
        parent.children.remove(child.id)
        child.parent = None
        child.edge = None

    # -- queries ------------------------------------------------------------

    def world_frame(self, node_id: int) -> RigidTransform:
        node = self.nodes[node_id]
        if node.parent is None:
            return node.edge if node.edge is not None else node.frame
        return compose(self.world_frame(node.parent), node.edge)

    def bfs_order(self, start: int) -> list:
        order = [start]
        i = 0
        while i < len(order):
            node = self.nodes[order[i]]
            order.extend(sorted(node.children))
            i += 1
        return order

    def depth(self, node_id: int) -> int:
        d = 0
        node = self.nodes[node_id]
        while node.parent is not None:
            node = self.nodes[node.parent]
            d += 1
        return d

    def subtree_elements(self, start: int) -> int:
        return sum(self.nodes[i].n_elements for i in self.bfs_order(start))

    def leaves(self) -> list:
        return [n.id for n in self.nodes.values() if not n.children]

    def content_labels(self) -> list:
        labs = {n.label for n in self.nodes.values()
                if n.label not in (SYNTHETIC_LABEL, NO_LABEL) and n.id != self.root_id}
        return sorted(labs)

    def check_invariants(self, tol_factor: float = 1e-6) -> None:
        """Single root, acyclicity, containment, and edge reconstruction."""
        roots = [n for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1 or roots[0].id != self.root_id:
            raise TreeError("tree must have exactly one root")
        tol = tol_factor * self.model.diagonal
        seen = set()
        for nid in self.bfs_order(self.root_id):
            if nid in seen:
                raise TreeError("cycle detected")
            seen.add(nid)
            node = self.nodes[nid]
            if node.parent is not None:
                parent = self.nodes[node.parent]
                if not node.flagged and not parent.bbox.contains(node.bbox, slack=tol):
                    raise TreeError(f"node {nid} escapes its parent's bbox")
                world = self.world_frame(nid)
                if (
                    not np.allclose(world.rotation, node.frame.rotation, atol=tol)
                    or np.linalg.norm(world.translation - node.frame.translation) > tol
                ):
                    raise TreeError(f"edge transforms do not reproduce node {nid} frame")
        if len(seen) != len(self.nodes):
            raise TreeError("disconnected nodes present")

    def to_outline(self) -> dict:
        """Nested JSON outline (id, label, bbox, transform) for UI previews."""

        def visit(nid: int) -> dict:
            node = self.nodes[nid]
            edge = node.edge
            return {
                "id": node.id,
                "label": node.label,
                "bbox": {
                    "min": [float(x) for x in node.bbox.min_point],
                    "max": [float(x) for x in node.bbox.max_point],
                },
                "transform": None if edge is None else {
                    "rotation": [[float(v) for v in row] for row in edge.rotation],
                    "translation": [float(v) for v in edge.translation],
                },
                "children": [visit(c) for c in sorted(node.children)],
            }

        return visit(self.root_id)


def build_tree(components: ComponentSet) -> InstanceTree:
    """Insert components by decreasing volume; attach to the tightest
    containing node (or, flagged, the tightest node containing the center)."""
    if components.n_components == 0:
        raise TreeError("empty component set")
    model = components.model
    tree = InstanceTree(model, component_set=components)
    diag = model.diagonal
    slack = 1e-6 * diag
    order = sorted(
        components.components,
        key=lambda c: (-c.bbox.measure(diag), c.id),
    )
    placed: list = []
    for comp in order:
        node = tree.new_node(
            components.labels[comp.id] + 1, comp.bbox, comp.local_frame,
            component_id=comp.id, n_elements=comp.n_elements,
            local_bbox=comp.local_bbox,
        )
        strict = [p for p in placed if p.bbox.contains(node.bbox, slack=slack)]
        # a noisy thin part can escape every strict container; also consider
        # nodes that contain the bbox with per-axis slack up to the
        # component's own half-extent, and flag that attachment
        loose_slack = np.maximum(slack, 0.5 * node.bbox.extents)
        strict_ids = {p.id for p in strict}
        loose = [
            p for p in placed
            if p.id not in strict_ids
            and p.bbox.contains(node.bbox, slack=loose_slack)
        ]
        candidates = strict + loose
        if candidates:
            parent = min(candidates, key=lambda p: (p.bbox.measure(diag), p.id))
            node.flagged = parent.id not in strict_ids
            tree.attach(node, parent)
        placed.append(node)
    top = [n for n in placed if n.parent is None]
    if len(top) == 1:
        tree.root_id = top[0].id
    else:
        frame = RigidTransform.from_translation(model.bbox.min_point)
        root = tree.new_node(SYNTHETIC_LABEL, model.bbox, frame)
        for n in top:
            tree.attach(n, root)
        tree.root_id = root.id
    tree.check_invariants()
    return tree


# ---------------------------------------------------------------------------
# subtree similarity


def _level_labels(tree: InstanceTree, start: int) -> list:
    """Sorted label list per BFS depth, starting below the subtree root."""
    levels: list = []
    frontier = [start]
    while frontier:
        nxt = []
        for nid in frontier:
            nxt.extend(tree.nodes[nid].children)
        if not nxt:
            break
        levels.append(sorted(tree.nodes[c].label for c in nxt))
        frontier = nxt
    return levels


def subtree_structure_scores(tree: InstanceTree, a: int, b: int):
    """(structure score, label score) over BFS levels of two subtrees."""
    la = _level_labels(tree, a)
    lb = _level_labels(tree, b)
    depth = max(len(la), len(lb))
    if depth == 0:
        return 1.0, 1.0
    total = 0
    mismatch = 0
    label_hit = 0
    label_tot = 0
    for lvl in range(depth):
        xs = la[lvl] if lvl < len(la) else []
        ys = lb[lvl] if lvl < len(lb) else []
        total += max(len(xs), len(ys))
        mismatch += abs(len(xs) - len(ys))
        label_tot += max(len(xs), len(ys))
        cx = {l: xs.count(l) for l in set(xs)}
        for l in set(ys):
            label_hit += min(cx.get(l, 0), ys.count(l))
    struct = 1.0 - mismatch / max(total, 1)
    label = label_hit / max(label_tot, 1)
    return struct, label


def subtree_similar(a: int, b: int, tree: InstanceTree, params: TreeParams) -> bool:
    """True iff structure, child labels, element counts, and bbox extents match."""
    na, nb = tree.nodes[a], tree.nodes[b]
    struct, label = subtree_structure_scores(tree, a, b)
    if struct < params.theta_sub or label < params.theta_sym:
        return False
    ea = tree.subtree_elements(a)
    eb = tree.subtree_elements(b)
    if abs(ea - eb) / max(ea, eb, 1) > params.theta_ele:
        return False
    xa, xb = na.local_extents, nb.local_extents
    scale = max(na.bbox.diagonal, nb.bbox.diagonal, 1e-12 * tree.model.diagonal)
    if float(np.max(np.abs(xa - xb))) / scale > params.theta_box:
        return False
    return True


def subtree_dissimilarity(a: int, b: int, tree: InstanceTree) -> float:
    """Scalar distance used for medoid selection."""
    struct, label = subtree_structure_scores(tree, a, b)
    na, nb = tree.nodes[a], tree.nodes[b]
    ea = tree.subtree_elements(a)
    eb = tree.subtree_elements(b)
    scale = max(na.bbox.diagonal, nb.bbox.diagonal, 1e-12)
    return (
        (1.0 - struct)
        + (1.0 - label)
        + abs(ea - eb) / max(ea, eb, 1)
        + float(np.max(np.abs(na.local_extents - nb.local_extents))) / scale
    )


# ---------------------------------------------------------------------------
# label refinement and representatives


def refine_labels(tree: InstanceTree, params: TreeParams):
    """Split label classes until every same-label pair is subtree-similar.

    Only splits, never merges.  Returns (tree, representatives) where each
    final label has one representative whose canonical geometry is the
    medoid member.
    """
    next_label = max((n.label for n in tree.nodes.values()), default=0) + 1
    reps: list = []
    for label in tree.content_labels():
        members = sorted(n.id for n in tree.nodes.values() if n.label == label)
        subgroups: list = []
        for m in members:
            placed = False
            for grp in subgroups:
                if all(subtree_similar(m, o, tree, params) for o in grp):
                    grp.append(m)
                    placed = True
                    break
            if not placed:
                subgroups.append([m])
        for gi, grp in enumerate(subgroups):
            if gi == 0:
                lab = label
            else:
                lab = next_label
                next_label += 1
                for m in grp:
                    tree.nodes[m].label = lab
            medoid = min(
                grp,
                key=lambda m: (sum(subtree_dissimilarity(m, o, tree) for o in grp), m),
            )
            roots = tuple(sorted({tree.nodes[m].parent for m in grp
                                  if tree.nodes[m].parent is not None}))
            reps.append(RepresentativeInstance(lab, tuple(grp), medoid, roots))
    reps.sort(key=lambda r: r.label)
    return tree, reps


def canonicalize_join(tree: InstanceTree, rep: RepresentativeInstance) -> InstanceTree:
    """Fold single-child intermediate chain nodes above each member into the
    member's edge transform so all members hang off component-bearing
    ancestors with the same chain depth.  Idempotent."""
    for mid in rep.member_ids:
        node = tree.nodes[mid]
        while node.parent is not None:
            parent = tree.nodes[node.parent]
            if (
                parent.component_id is None
                and parent.id != tree.root_id
                and len(parent.children) == 1
            ):
                grand = tree.nodes[parent.parent]
                folded_edge = compose(parent.edge, node.edge)
                tree.detach(node)
                node.parent = grand.id
                node.edge = folded_edge
                grand.children.append(node.id)
                grand.children.remove(parent.id)
                parent.parent = None
                parent.edge = None
                del tree.nodes[parent.id]
            else:
                break
    tree.check_invariants()
    return tree


def refreshed_representatives(tree: InstanceTree, reps) -> list:
    """Re-derive application roots after canonicalization."""
    out = []
    for rep in reps:
        roots = tuple(sorted({tree.nodes[m].parent for m in rep.member_ids
                              if tree.nodes[m].parent is not None}))
        out.append(RepresentativeInstance(rep.label, rep.member_ids,
                                          rep.canonical_id, roots, rep.flagged))
    return out
