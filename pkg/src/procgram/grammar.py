"""Split grammars: pattern extraction from instance trees, export, parsing,
serialization, and re-derivation of geometry.

A rule summarizes all members of one representative under one application
root as a translation lattice (up to 3 axes) or a single-axis rotational /
helical pattern, plus singleton split operations for members no lattice
explains.  All numeric fields are rounded to 9 significant digits at
construction so serialization is byte-stable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    BoundingBox,
    DataType,
    GeometryError,
    Model,
    RigidTransform,
    bbox_of,
    compose,
    rotation_angle,
)
from .tree import (
    NO_LABEL,
    SYNTHETIC_LABEL,
    InstanceTree,
    RepresentativeInstance,
    TreeNode,
)

GRAMMAR_VERSION = 1


class GrammarError(GeometryError):
    pass


def q9(x: float) -> float:
    """Round to 9 significant digits (stable under repeated formatting)."""
    return float(f"{float(x):.9g}")


def q9a(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    return np.array([q9(v) for v in a.ravel()]).reshape(a.shape)


def q9_transform(t: RigidTransform) -> RigidTransform:
    # rounding keeps the matrix orthonormal to ~1e-8, within tolerance, and
    # makes serialize(parse(serialize(g))) byte-identical to serialize(g)
    return RigidTransform(q9a(t.rotation), q9a(t.translation))


@dataclass(frozen=True)
class PatternParams:
    """Pattern-extraction parameters steered by the guidance loop."""

    theta_pat: float = 0.05  # lattice residual tolerance (fraction of member size)
    theta_ins: float = 0.05  # transform distance allowed when averaging

    BOUNDS = {"theta_pat": (0.0, 1.0), "theta_ins": (0.0, 1.0)}

    def __post_init__(self):
        for name, (lo, hi) in self.BOUNDS.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside bounds [{lo}, {hi}]")


def transform_distance(a: RigidTransform, b: RigidTransform, scale: float) -> float:
    """Translation distance over scale plus geodesic rotation angle over pi."""
    dt = float(np.linalg.norm(a.translation - b.translation)) / max(scale, 1e-30)
    da = rotation_angle(a.rotation.T @ b.rotation) / math.pi
    return dt + da


@dataclass(frozen=True)
class Rule:
    """[repetition][spacing][rotation][representative] production."""

    lhs: str
    produces: str
    repetition: tuple  # (nu, nv, nw), each >= 1
    spacing: tuple     # per-axis displacement 3-vectors, len == #lattice axes
    origin: RigidTransform  # slot (0,0,0) frame relative to the lhs frame
    rotation: dict | None = None  # {axis, step_deg, center} for rotational rules
    split_ops: tuple = ()         # residual singleton transforms
    residual: float = 0.0         # max member deviation from its slot
    member_ids: tuple = ()        # source tree nodes (not serialized)

    def __post_init__(self):
        if any(r < 1 for r in self.repetition):
            raise GrammarError("repetition counts must be >= 1")
        if self.rotation is not None and len(self.spacing) > 1:
            raise GrammarError("rotation rules support a single lattice axis")

    @property
    def n_instances(self) -> int:
        return int(np.prod(self.repetition)) + len(self.split_ops)

    def slot_transforms(self, repetition=None) -> list:
        """Expanded instance frames relative to the lhs frame."""
        rep = tuple(repetition) if repetition is not None else self.repetition
        if any(r < 1 for r in rep):
            raise GrammarError("repetition override must be >= 1")
        out = []
        if self.rotation is not None:
            axis = np.asarray(self.rotation["axis"], dtype=np.float64)
            center = np.asarray(self.rotation["center"], dtype=np.float64)
            step = math.radians(self.rotation["step_deg"])
            pitch = np.asarray(self.spacing[0], dtype=np.float64) if self.spacing else np.zeros(3)
            for k in range(rep[0]):
                rot = RigidTransform.from_axis_angle(axis, k * step)
                about = RigidTransform(rot.rotation,
                                       center - rot.rotation @ center + k * pitch)
                out.append(compose(about, self.origin))
        else:
            axes = [np.asarray(s, dtype=np.float64) for s in self.spacing]
            for k in range(rep[2]):
                for j in range(rep[1]):
                    for i in range(rep[0]):
                        off = np.zeros(3)
                        for c, ax in zip((i, j, k), axes):
                            off = off + c * ax
                        out.append(
                            RigidTransform(self.origin.rotation,
                                           self.origin.translation + off)
                        )
        out.extend(self.split_ops)
        return out


@dataclass(frozen=True)
class SymbolInfo:
    """Terminal or non-terminal payload: canonical geometry in local frame."""

    id: str
    label: int
    kind: str  # "mesh" | "point_cloud" | "empty"
    geometry: np.ndarray | None  # (n,3,3) triangles or (n,3) points
    local_bbox: BoundingBox


@dataclass(frozen=True)
class SplitGrammar:
    axiom: str
    terminals: dict   # id -> SymbolInfo
    nonterminals: dict  # id -> SymbolInfo
    rules: tuple
    axiom_frame: RigidTransform
    meta: dict = field(default_factory=dict)
    version: int = GRAMMAR_VERSION

    def __post_init__(self):
        ids = set(self.terminals) | set(self.nonterminals)
        if set(self.terminals) & set(self.nonterminals):
            raise GrammarError("terminal and non-terminal ids overlap")
        if self.axiom not in ids:
            raise GrammarError("axiom is not a grammar symbol")
        for r in self.rules:
            if r.lhs not in self.nonterminals:
                raise GrammarError(f"rule lhs {r.lhs} is not a non-terminal")
            if r.produces not in ids:
                raise GrammarError(f"rule produces unknown symbol {r.produces}")
        self._check_productive()

    def _check_productive(self):
        """Every non-terminal must derive terminals through acyclic rules."""
        children: dict = {n: set() for n in self.nonterminals}
        for r in self.rules:
            children[r.lhs].add(r.produces)
        state: dict = {}

        def visit(sym: str) -> None:
            if sym in self.terminals:
                return
            if state.get(sym) == "active":
                raise GrammarError(f"cycle through non-terminal {sym}")
            if state.get(sym) == "done":
                return
            state[sym] = "active"
            for c in sorted(children.get(sym, ())):
                visit(c)
            state[sym] = "done"

        visit(self.axiom)
        for n in self.nonterminals:
            visit(n)

    def rules_for(self, sym: str) -> list:
        return [r for r in self.rules if r.lhs == sym]

    def instance_count(self, sym: str | None = None) -> int:
        """Total derived instances from `sym` (default: the axiom)."""
        sym = sym or self.axiom
        if sym in self.terminals:
            return 1
        return 1 + sum(r.n_instances * self.instance_count(r.produces)
                       for r in self.rules_for(sym))


# ---------------------------------------------------------------------------
# pattern extraction


def _fit_translation_lattice(translations: np.ndarray, tol: float):
    """Complete-box lattice fit.  Returns (origin_t, axes, dims, coords) or None."""
    n = len(translations)
    diffs = []
    for i in range(n):
        for j in range(n):
            if i != j:
                d = translations[j] - translations[i]
                if np.linalg.norm(d) > tol:
                    diffs.append(d)
    if not diffs:
        return None
    diffs.sort(key=lambda d: (np.linalg.norm(d), tuple(d)))
    basis: list = []
    for d in diffs:
        if len(basis) == 3:
            break
        if not basis:
            basis.append(d)
            continue
        B = np.stack(basis, axis=1)
        coef, res, _, _ = np.linalg.lstsq(B, d, rcond=None)
        perp = d - B @ coef
        if np.linalg.norm(perp) > max(tol, 0.05 * np.linalg.norm(d)):
            basis.append(d)
    for ndim in range(1, len(basis) + 1):
        fit = _try_lattice(translations, basis[:ndim], tol)
        if fit is not None:
            return fit
    return None


def _try_lattice(translations: np.ndarray, basis: list, tol: float):
    B = np.stack(basis, axis=1)  # 3 x k
    rel = translations - translations[0]
    coords, _, _, _ = np.linalg.lstsq(B, rel.T, rcond=None)
    ints = np.round(coords.T)  # n x k
    recon = (B @ ints.T).T
    if np.max(np.linalg.norm(rel - recon, axis=1)) > tol:
        return None
    ints = ints - ints.min(axis=0)
    dims = ints.max(axis=0).astype(int) + 1
    if len(ints) != int(np.prod(dims)):
        return None
    keys = {tuple(c) for c in ints.astype(int)}
    if len(keys) != len(ints):
        return None
    # refine basis and origin by least squares over the integer coords
    A = np.hstack([ints, np.ones((len(ints), 1))])  # n x (k+1)
    sol, _, _, _ = np.linalg.lstsq(A, translations, rcond=None)
    axes = [sol[i] for i in range(len(basis))]
    origin_t = sol[-1]
    recon = A @ sol
    if np.max(np.linalg.norm(translations - recon, axis=1)) > tol:
        return None
    coords_int = ints.astype(int)
    return origin_t, axes, tuple(int(d) for d in dims), coords_int


def _fit_rotation_pattern(edges: list, tol: float, rot_tol: float):
    """Uniform single-axis rotational/helical fit.

    Returns (origin_edge, axis, step_rad, center, pitch_vec, n) or None.
    """
    n = len(edges)
    if n < 2:
        return None
    R0 = edges[0].rotation
    rel = [e.rotation @ R0.T for e in edges]
    angles = [rotation_angle(r) for r in rel]
    if max(angles) < rot_tol:
        return None
    # common axis from the largest-angle relative rotation
    k = int(np.argmax(angles))
    w, v = np.linalg.eigh((rel[k] + rel[k].T) / 2.0)
    axis = v[:, -1]
    axis = axis / np.linalg.norm(axis)

    def signed_angle(R):
        sin_part = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
        return math.atan2(float(sin_part @ axis), (np.trace(R) - 1.0) / 2.0)

    heights = [float(e.translation @ axis) for e in edges]
    span = max(heights) - min(heights)
    if span > tol:
        order = np.argsort(heights, kind="stable")
    else:
        wrapped = np.array([signed_angle(r) % (2 * math.pi) for r in rel])
        order = np.argsort(wrapped, kind="stable")
        # members occupy an arc that may straddle 0/2pi: start the
        # traversal just after the largest circular gap so steps stay uniform
        sorted_a = wrapped[order]
        gaps = np.diff(np.concatenate([sorted_a, sorted_a[:1] + 2 * math.pi]))
        start = (int(np.argmax(gaps)) + 1) % n
        order = np.concatenate([order[start:], order[:start]])
    ordered = [edges[i] for i in order]
    steps = [ordered[i + 1].rotation @ ordered[i].rotation.T for i in range(n - 1)]
    step_angles = [signed_angle(s) for s in steps]
    step = step_angles[0]
    if abs(step) < rot_tol:
        return None
    for s, a in zip(steps, step_angles):
        if abs(a - step) > rot_tol or rotation_angle(
            s @ RigidTransform.from_axis_angle(axis, a).rotation.T
        ) > rot_tol:
            return None
    # least squares for center c and pitch p:
    # t_i = R(i*step)(t0 - c) + c + i*p*axis
    t0 = ordered[0].translation
    rows = []
    rhs = []
    for i in range(n):
        Ri = RigidTransform.from_axis_angle(axis, i * step).rotation
        A = np.hstack([np.eye(3) - Ri, (i * axis)[:, None]])
        rows.append(A)
        rhs.append(ordered[i].translation - Ri @ t0)
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    sol, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    center, pitch = sol[:3], float(sol[3])
    for i in range(n):
        Ri = RigidTransform.from_axis_angle(axis, i * step).rotation
        pred = Ri @ (t0 - center) + center + i * pitch * axis
        if np.linalg.norm(pred - ordered[i].translation) > tol:
            return None
    return ordered[0], axis, step, center, pitch * axis, n


def _member_edges(tree: InstanceTree, parent: TreeNode, member_ids) -> list:
    edges = []
    for m in member_ids:
        node = tree.nodes[m]
        if node.parent != parent.id:
            raise GrammarError("member grouped under the wrong parent")
        edges.append((m, node.edge))
    edges.sort(key=lambda t: t[0])
    return edges


def _symbol_for(tree: InstanceTree, label: int) -> str:
    members = [n for n in tree.nodes.values() if n.label == label]
    is_leaf = all(not m.children for m in members)
    return ("T" if is_leaf else "N") + str(label)


def extract_patterns(tree: InstanceTree, reps, params: PatternParams) -> list:
    """One averaged rule per (representative, parent label)."""
    rules: list = []
    for rep in sorted(reps, key=lambda r: r.label):
        by_parent: dict = {}
        for m in rep.member_ids:
            pid = tree.nodes[m].parent
            if pid is None:
                continue  # the root itself is never produced by a rule
            by_parent.setdefault(pid, []).append(m)
        if not by_parent:
            continue
        # group application roots by their label (one rule per lhs label)
        by_lhs_label: dict = {}
        for pid, members in by_parent.items():
            by_lhs_label.setdefault(tree.nodes[pid].label, []).append((pid, members))
        for lhs_label, groups in sorted(by_lhs_label.items()):
            rules.append(_averaged_rule(tree, rep, lhs_label, groups, params))
    rules.sort(key=lambda r: (r.lhs, r.produces))
    return rules


def _averaged_rule(tree: InstanceTree, rep, lhs_label: int, groups,
                   params: PatternParams) -> Rule:
    sizes = [tree.nodes[m].local_extents for _, ms in groups for m in ms]
    scale = max(float(np.mean([np.linalg.norm(s) for s in sizes])),
                1e-9 * tree.model.diagonal)
    tol = max(params.theta_pat, 1e-6) * scale
    rot_tol = max(params.theta_pat, 1e-6) * math.pi / 2
    fits = []
    for pid, members in sorted(groups):
        edges = [e for _, e in _member_edges(tree, tree.nodes[pid], members)]
        fits.append((pid, members, _fit_group(edges, tol, rot_tol)))
    # merge per-root fits: use the first fit's shape; average when compatible
    base = fits[0][2]
    compatible = [f for f in fits if _fits_compatible(base, f[2])]
    if len(compatible) < len(fits):
        # roots disagree structurally: degrade everyone to singleton splits
        base = None
        compatible = fits
    member_ids = tuple(m for _, ms, _ in fits for m in ms)
    lhs = _symbol_for(tree, lhs_label)
    produces = _symbol_for(tree, rep.label)
    sample = _rep_local_samples(tree, rep)
    if base is None:
        # context-free rules derive identically under every lhs instance, so
        # when roots disagree we take the first root's explicit splits and
        # report the others' deviation as residual
        rule = _first_root_splits(tree, fits, lhs, produces, member_ids)
        residual = _max_slot_deviation(tree, fits, rule, scale, sample)
        return Rule(rule.lhs, rule.produces, rule.repetition, rule.spacing,
                    rule.origin, split_ops=rule.split_ops, residual=q9(residual),
                    member_ids=member_ids)
    kind = base["kind"]
    if kind == "rotation":
        step = float(np.mean([f[2]["step"] for f in compatible]))
        axis = np.mean([f[2]["axis"] for f in compatible], axis=0)
        axis /= np.linalg.norm(axis)
        center = np.mean([f[2]["center"] for f in compatible], axis=0)
        pitch = np.mean([f[2]["pitch"] for f in compatible], axis=0)
        origin = _mean_transform([f[2]["origin"] for f in compatible])
        rule = Rule(lhs, produces, (base["n"], 1, 1),
                    (tuple(q9a(pitch)),), q9_transform(origin),
                    rotation={"axis": tuple(q9a(axis)),
                              "step_deg": q9(math.degrees(step)),
                              "center": tuple(q9a(center))},
                    member_ids=member_ids)
    elif kind == "lattice":
        axes = [np.mean([f[2]["axes"][i] for f in compatible], axis=0)
                for i in range(len(base["axes"]))]
        origin_t = np.mean([f[2]["origin_t"] for f in compatible], axis=0)
        R = base["rotation"]
        dims = base["dims"] + (1,) * (3 - len(base["dims"]))
        rule = Rule(lhs, produces, dims,
                    tuple(tuple(q9a(a)) for a in axes),
                    q9_transform(RigidTransform(R, origin_t)),
                    member_ids=member_ids)
    else:  # singleton
        origin = _mean_transform([f[2]["origin"] for f in compatible])
        rule = Rule(lhs, produces, (1, 1, 1), (), q9_transform(origin),
                    member_ids=member_ids)
    residual = _max_slot_deviation(tree, fits, rule, scale, sample)
    if residual > max(params.theta_pat, 1e-6) and (
        rule.rotation is not None or any(r > 1 for r in rule.repetition)
    ):
        # the pattern does not reproduce the members geometrically: fall back
        # to one explicit split per member of the first root
        rule = _first_root_splits(tree, fits, lhs, produces, member_ids)
        residual = _max_slot_deviation(tree, fits, rule, scale, sample)
    return Rule(rule.lhs, rule.produces, rule.repetition, rule.spacing, rule.origin,
                rotation=rule.rotation, split_ops=rule.split_ops,
                residual=q9(residual), member_ids=member_ids)


def _first_root_splits(tree: InstanceTree, fits, lhs: str, produces: str,
                       member_ids) -> Rule:
    pid, ms, _ = fits[0]
    edges = [q9_transform(e) for _, e in _member_edges(tree, tree.nodes[pid], ms)]
    return Rule(lhs, produces, (1, 1, 1), (), edges[0],
                split_ops=tuple(edges[1:]), member_ids=member_ids)


def _fit_group(edges: list, tol: float, rot_tol: float) -> dict:
    if len(edges) == 1:
        return {"kind": "singleton", "origin": edges[0]}
    rot = _fit_rotation_pattern(edges, tol, rot_tol)
    if rot is not None:
        origin, axis, step, center, pitch, n = rot
        return {"kind": "rotation", "origin": origin, "axis": axis, "step": step,
                "center": center, "pitch": pitch, "n": n}
    # lattice fit ignores member rotations: shapes with rotational symmetry
    # get arbitrary-but-equivalent canonical frames, so we take the first
    # member's rotation and let the geometric residual arbitrate
    translations = np.stack([e.translation for e in edges])
    fit = _fit_translation_lattice(translations, tol)
    if fit is not None:
        origin_t, axes, dims, _ = fit
        return {"kind": "lattice", "origin_t": origin_t, "axes": axes,
                "dims": dims, "rotation": edges[0].rotation}
    return {"kind": "splits", "origin": None}


def _fits_compatible(base: dict | None, other: dict) -> bool:
    if base is None or other is None:
        return False
    if base["kind"] != other["kind"]:
        return False
    if base["kind"] == "splits":
        return False
    if base["kind"] == "lattice":
        return base["dims"] == other["dims"]
    if base["kind"] == "rotation":
        return base["n"] == other["n"]
    return True


def _mean_transform(transforms: list) -> RigidTransform:
    t = np.mean([x.translation for x in transforms], axis=0)
    M = np.mean([x.rotation for x in transforms], axis=0)
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    return RigidTransform(R, t)


def _rep_local_samples(tree: InstanceTree, rep) -> np.ndarray:
    """Local-frame sample points of the representative's canonical member."""
    node = tree.nodes[rep.canonical_id]
    cs = tree.component_set
    if node.component_id is not None and cs is not None:
        comp = next(c for c in cs.components if c.id == node.component_id)
        pts = tree.model.element_positions(comp.element_indices).reshape(-1, 3)
        local = node.frame.inverse().apply(pts)
        if len(local) > 64:
            step = len(local) // 64
            local = local[::step][:64]
        return local
    lb = node.local_bbox or BoundingBox(np.zeros(3), node.local_extents)
    lo, hi = lb.min_point, lb.max_point
    return np.array([[x, y, z] for x in (lo[0], hi[0])
                     for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def _sample_deviation(a: RigidTransform, b: RigidTransform,
                      sample: np.ndarray, scale: float) -> float:
    """Chamfer distance between a(sample) and b(sample), over scale.

    Nearest-point matching keeps self-symmetric shapes free: two frames that
    differ by a symmetry of the shape produce the same point set.
    """
    from scipy.spatial import cKDTree

    pa = a.apply(sample)
    pb = b.apply(sample)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return max(float(d_ab.mean()), float(d_ba.mean())) / max(scale, 1e-30)


def _max_slot_deviation(tree: InstanceTree, fits, rule: Rule, scale: float,
                        sample: np.ndarray) -> float:
    worst = 0.0
    for pid, members, _ in fits:
        edges = [e for _, e in _member_edges(tree, tree.nodes[pid], members)]
        slots = rule.slot_transforms()
        for e in edges:
            d = min(_sample_deviation(e, s, sample, scale) for s in slots)
            worst = max(worst, d)
    return worst


# ---------------------------------------------------------------------------
# export


def _local_geometry(tree: InstanceTree, node: TreeNode) -> np.ndarray | None:
    if node.component_id is None:
        return None
    comp = next(c for c in _component_source(tree) if c.id == node.component_id)
    model = tree.model
    if model.kind == DataType.MESH:
        verts = model.triangles[comp.element_indices]
        flat = node.frame.inverse().apply(verts.reshape(-1, 3))
        return q9a(flat.reshape(-1, 3, 3))
    return q9a(node.frame.inverse().apply(model.points[comp.element_indices]))


def export_grammar(tree: InstanceTree, rules: list,
                   component_set=None, meta: dict | None = None) -> SplitGrammar:
    """Convert a canonicalized tree plus extracted rules into a split grammar."""
    if component_set is not None:
        tree.component_set = component_set  # used to resolve geometry payloads
    covered: dict = {}
    for r in rules:
        for m in r.member_ids:
            if m in covered:
                raise GrammarError(f"node {m} covered by two rules (internal error)")
            covered[m] = r
    for nid in tree.bfs_order(tree.root_id):
        if nid != tree.root_id and nid not in covered:
            raise GrammarError(f"node {nid} not covered by any rule (internal error)")
    labels = {}
    for node in tree.nodes.values():
        labels.setdefault(node.label, []).append(node)
    terminals: dict = {}
    nonterminals: dict = {}
    for label, members in sorted(labels.items()):
        sym = _symbol_for(tree, label)
        canon = min(members, key=lambda n: n.id)
        geom = _local_geometry(tree, canon)
        if geom is None:
            kind = "empty"
            lb = BoundingBox(np.zeros(3), canon.local_extents)
        else:
            kind = "mesh" if tree.model.kind == DataType.MESH else "point_cloud"
            lb = bbox_of(geom.reshape(-1, 3))
            lb = BoundingBox(q9a(lb.min_point), q9a(lb.max_point))
        info = SymbolInfo(sym, label, kind, geom, lb)
        if sym.startswith("T"):
            terminals[sym] = info
        else:
            nonterminals[sym] = info
    axiom = _symbol_for(tree, tree.nodes[tree.root_id].label)
    clean_rules = tuple(sorted(rules, key=lambda r: (r.lhs, r.produces)))
    meta = dict(meta or {})
    meta.setdefault("residual", q9(max((r.residual for r in clean_rules), default=0.0)))
    return SplitGrammar(
        axiom=axiom,
        terminals=terminals,
        nonterminals=nonterminals,
        rules=clean_rules,
        axiom_frame=q9_transform(tree.nodes[tree.root_id].frame),
        meta=meta,
    )


def _component_source(tree: InstanceTree):
    cs = tree.component_set
    if cs is None:
        raise GrammarError("tree lacks a component set for geometry payloads")
    return cs.components


# ---------------------------------------------------------------------------
# derivation


@dataclass(frozen=True)
class Derivation:
    """Regenerated model plus instance provenance."""

    model: Model
    instances: tuple  # (symbol, RigidTransform world frame, parent index or None)
    provenance: dict  # instance index -> (rule lhs, produces) or "axiom"

    @property
    def n_instances(self) -> int:
        return len(self.instances)


def derive(grammar: SplitGrammar, overrides: dict | None = None) -> Derivation:
    """Expand the axiom, instantiating symbol geometry under accumulated
    transforms.  `overrides` maps "lhs->produces" to {"repetition": (..)}."""
    overrides = dict(overrides or {})
    for key in overrides:
        if not any(f"{r.lhs}->{r.produces}" == key for r in grammar.rules):
            raise GrammarError(f"override for unknown rule '{key}'")
    instances: list = []
    provenance: dict = {}
    chunks: list = []

    def symbol_info(sym: str) -> SymbolInfo:
        return grammar.terminals.get(sym) or grammar.nonterminals[sym]

    def instantiate(sym: str, frame: RigidTransform, parent_idx, via) -> None:
        idx = len(instances)
        instances.append((sym, frame, parent_idx))
        provenance[idx] = via
        info = symbol_info(sym)
        if info.geometry is not None:
            geom = info.geometry
            if info.kind == "mesh":
                chunks.append(frame.apply(geom.reshape(-1, 3)).reshape(-1, 3, 3))
            else:
                chunks.append(frame.apply(geom))
        for rule in grammar.rules_for(sym):
            key = f"{rule.lhs}->{rule.produces}"
            rep = overrides.get(key, {}).get("repetition")
            for slot in rule.slot_transforms(rep):
                instantiate(rule.produces, compose(frame, slot), idx, key)

    instantiate(grammar.axiom, grammar.axiom_frame, None, "axiom")
    kinds = {symbol_info(s).kind for s, _, _ in instances} - {"empty"}
    if not chunks:
        raise GrammarError("grammar derived no geometry")
    if kinds == {"mesh"}:
        model = Model(DataType.MESH, triangles=np.concatenate(chunks))
    else:
        model = Model(DataType.POINT_CLOUD, points=np.concatenate(chunks))
    return Derivation(model, tuple(instances), provenance)


# ---------------------------------------------------------------------------
# serialization


def _transform_json(t: RigidTransform) -> dict:
    return {
        "rotation": [[q9(v) for v in row] for row in t.rotation],
        "translation": [q9(v) for v in t.translation],
    }


def _transform_from_json(d: dict) -> RigidTransform:
    return RigidTransform(np.array(d["rotation"], dtype=np.float64),
                          np.array(d["translation"], dtype=np.float64))


def _symbol_json(info: SymbolInfo, inline_geometry: bool) -> dict:
    ext = "obj" if info.kind == "mesh" else "xyz"
    out = {
        "id": info.id,
        "label": info.label,
        "geometryRef": None if info.kind == "empty" else f"{info.id}.{ext}",
        "bbox": {
            "min": [q9(v) for v in info.local_bbox.min_point],
            "max": [q9(v) for v in info.local_bbox.max_point],
        },
        "kind": info.kind,
    }
    if inline_geometry and info.geometry is not None:
        out["geometry"] = [q9(v) for v in info.geometry.ravel()]
    return out


def _symbol_from_json(d: dict, geometry=None) -> SymbolInfo:
    kind = d["kind"]
    geom = None
    if geometry is not None:
        geom = geometry
    elif "geometry" in d:
        flat = np.array(d["geometry"], dtype=np.float64)
        geom = flat.reshape(-1, 3, 3) if kind == "mesh" else flat.reshape(-1, 3)
    bb = BoundingBox(np.array(d["bbox"]["min"]), np.array(d["bbox"]["max"]))
    return SymbolInfo(d["id"], int(d["label"]), kind, geom, bb)


def _rule_json(r: Rule) -> dict:
    return {
        "lhs": r.lhs,
        "produces": r.produces,
        "repetition": list(r.repetition),
        "spacing": [[q9(v) for v in s] for s in r.spacing],
        "rotation": None if r.rotation is None else {
            "axis": [q9(v) for v in r.rotation["axis"]],
            "stepDeg": q9(r.rotation["step_deg"]),
            "center": [q9(v) for v in r.rotation["center"]],
        },
        "origin": _transform_json(r.origin),
        "splitOps": [_transform_json(t) for t in r.split_ops],
        "residual": q9(r.residual),
    }


def _rule_from_json(d: dict) -> Rule:
    rot = d.get("rotation")
    return Rule(
        d["lhs"], d["produces"], tuple(int(x) for x in d["repetition"]),
        tuple(tuple(float(v) for v in s) for s in d["spacing"]),
        _transform_from_json(d["origin"]),
        rotation=None if rot is None else {
            "axis": tuple(float(v) for v in rot["axis"]),
            "step_deg": float(rot["stepDeg"]),
            "center": tuple(float(v) for v in rot["center"]),
        },
        split_ops=tuple(_transform_from_json(t) for t in d["splitOps"]),
        residual=float(d["residual"]),
    )


def grammar_to_json(grammar: SplitGrammar, inline_geometry: bool = True) -> dict:
    return {
        "version": grammar.version,
        "axiom": grammar.axiom,
        "axiomFrame": _transform_json(grammar.axiom_frame),
        "terminals": [
            _symbol_json(grammar.terminals[k], inline_geometry)
            for k in sorted(grammar.terminals)
        ],
        "nonterminals": [
            _symbol_json(grammar.nonterminals[k], inline_geometry)
            for k in sorted(grammar.nonterminals)
        ],
        "rules": [_rule_json(r) for r in grammar.rules],
        "meta": {k: grammar.meta[k] for k in sorted(grammar.meta)},
    }


def serialize(grammar: SplitGrammar) -> bytes:
    """Self-contained JSON bytes with inline geometry; byte-deterministic."""
    doc = grammar_to_json(grammar, inline_geometry=True)
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode()


def _validate_doc(doc: dict) -> None:
    def need(d, key, path):
        if key not in d:
            raise GrammarError(f"grammar JSON missing {path}/{key}")
        return d[key]

    if need(doc, "version", "$") != GRAMMAR_VERSION:
        raise GrammarError(f"unsupported grammar version at $/version")
    for sec in ("axiom", "axiomFrame", "terminals", "nonterminals", "rules", "meta"):
        need(doc, sec, "$")
    for i, r in enumerate(doc["rules"]):
        rep = need(r, "repetition", f"$/rules/{i}")
        if any(int(x) < 1 for x in rep):
            raise GrammarError(f"$/rules/{i}/repetition: counts must be >= 1")


def parse(data: bytes | str, geometry_loader=None) -> SplitGrammar:
    """Inverse of serialize(); `geometry_loader(ref, kind)` resolves sidecars."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GrammarError(f"grammar JSON parse error: {exc}") from exc
    _validate_doc(doc)
    terminals = {}
    nonterminals = {}
    for sec, target in (("terminals", terminals), ("nonterminals", nonterminals)):
        for d in doc[sec]:
            geom = None
            if "geometry" not in d and geometry_loader is not None and d["geometryRef"]:
                geom = geometry_loader(d["geometryRef"], d["kind"])
            info = _symbol_from_json(d, geom)
            target[info.id] = info
    return SplitGrammar(
        axiom=doc["axiom"],
        terminals=terminals,
        nonterminals=nonterminals,
        rules=tuple(_rule_from_json(r) for r in doc["rules"]),
        axiom_frame=_transform_from_json(doc["axiomFrame"]),
        meta=dict(doc["meta"]),
        version=doc["version"],
    )


def save_grammar(grammar: SplitGrammar, path) -> None:
    """Write grammar JSON plus terminal-geometry sidecar files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = grammar_to_json(grammar, inline_geometry=False)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    for info in list(grammar.terminals.values()) + list(grammar.nonterminals.values()):
        if info.geometry is None:
            continue
        ref = path.parent / f"{info.id}.{'obj' if info.kind == 'mesh' else 'xyz'}"
        if info.kind == "mesh":
            lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}"
                     for v in info.geometry.reshape(-1, 3)]
            lines += [f"f {3*i+1} {3*i+2} {3*i+3}" for i in range(len(info.geometry))]
        else:
            lines = [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in info.geometry]
        ref.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_grammar(path) -> SplitGrammar:
    path = Path(path)

    def loader(ref: str, kind: str):
        target = path.parent / ref
        raw = target.read_text(encoding="utf-8").splitlines()
        if kind == "mesh":
            verts = [list(map(float, l.split()[1:4])) for l in raw if l.startswith("v ")]
            return np.array(verts).reshape(-1, 3, 3)
        return np.array([list(map(float, l.split()[:3])) for l in raw if l.strip()])

    return parse(path.read_text(encoding="utf-8"), geometry_loader=loader)


def grammars_equal(a: SplitGrammar, b: SplitGrammar) -> bool:
    """Structural equality, exact on all numeric fields."""
    return serialize(a) == serialize(b)
