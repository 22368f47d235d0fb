"""Guided proceduralization: evaluate grammars into specification values,
score them against targets, approximate the pipeline cheaply, and drive a
bound-constrained derivative-free search over the pipeline parameters.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import BoundingBox, GeometryError, Model
from .grammar import PatternParams, SplitGrammar
from .pipeline import PipelineParams, PipelineResult, proceduralize
from .segmentation import ShapeParams, extract_components
from .tree import TreeParams

VALUE_NAMES = ("alp", "non", "fan", "rep")

PARAM_NAMES = (
    "theta_geo", "theta_top", "theta_den", "theta_dir", "theta_num",
    "theta_sub", "theta_sym", "theta_ele", "theta_box",
    "theta_pat", "theta_ins",
)

_SHAPE_NAMES = PARAM_NAMES[:5]
_TREE_NAMES = PARAM_NAMES[5:9]
_PATTERN_NAMES = PARAM_NAMES[9:]

DEFAULT_BOUNDS = {
    **{n: ShapeParams.BOUNDS[n] for n in _SHAPE_NAMES},
    **{n: TreeParams.BOUNDS[n] for n in _TREE_NAMES},
    **{n: PatternParams.BOUNDS[n] for n in _PATTERN_NAMES},
}

DEFAULT_EPSILON = 0.05
DEFAULT_BUDGET = 200


class GuidanceError(GeometryError):
    pass


@dataclass(frozen=True)
class GrammarValues:
    """Specification values Gamma of a grammar."""

    alp: int      # alphabet size (terminal count)
    non: int      # non-terminal count
    fan: float    # average expanded instances per rule
    rep: int      # total component (instance) count

    def __post_init__(self):
        if self.alp < 0 or self.non < 0 or self.fan < 0 or self.rep < 0:
            raise GuidanceError("grammar values must be non-negative")
        if self.alp > self.rep:
            raise GuidanceError("alphabet cannot exceed component count")

    def as_dict(self) -> dict:
        return {"alp": self.alp, "non": self.non, "fan": self.fan, "rep": self.rep}

    def get(self, name: str) -> float:
        return float(getattr(self, name))


def evaluate(grammar: SplitGrammar) -> GrammarValues:
    """Exact, pure specification values from the grammar structure."""
    fan = (float(np.mean([r.n_instances for r in grammar.rules]))
           if grammar.rules else 0.0)
    return GrammarValues(
        alp=len(grammar.terminals),
        non=len(grammar.nonterminals),
        fan=fan,
        rep=grammar.instance_count(),
    )


@dataclass(frozen=True)
class TargetSpec:
    """Target grammar values; unset entries are don't-care."""

    targets: dict          # name -> target value (subset of VALUE_NAMES)
    weights: dict = field(default_factory=dict)  # name -> weight, default 1
    ranges: dict = field(default_factory=dict)   # name -> (lo, hi)
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.targets:
            raise GuidanceError("at least one target value must be set")
        for name in list(self.targets) + list(self.weights) + list(self.ranges):
            if name not in VALUE_NAMES:
                raise GuidanceError(f"unknown grammar value '{name}'")
        for name, w in self.weights.items():
            if w < 0:
                raise GuidanceError(f"negative weight for '{name}'")
        for name, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise GuidanceError(f"invalid range for '{name}'")
        if self.epsilon <= 0:
            raise GuidanceError("epsilon must be positive")

    def weight(self, name: str) -> float:
        return float(self.weights.get(name, 1.0))

    def as_dict(self) -> dict:
        return {"targets": dict(self.targets), "weights": dict(self.weights),
                "ranges": {k: list(v) for k, v in self.ranges.items()},
                "epsilon": self.epsilon}


def error(actual: GrammarValues, target: TargetSpec) -> float:
    """Phi: weighted relative L1 over the set targets."""
    phi = 0.0
    for name, want in target.targets.items():
        phi += target.weight(name) * abs(actual.get(name) - want) / max(want, 1.0)
    return phi


# ---------------------------------------------------------------------------
# parameter vector


@dataclass(frozen=True)
class ParamVector:
    """The 11 pipeline parameters as a flat, bound-constrained vector."""

    values: np.ndarray
    bounds: tuple = tuple(DEFAULT_BOUNDS[n] for n in PARAM_NAMES)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        if v.shape != (len(PARAM_NAMES),):
            raise GuidanceError(f"parameter vector must have {len(PARAM_NAMES)} entries")
        for x, (lo, hi), name in zip(v, self.bounds, PARAM_NAMES):
            if not (lo <= x <= hi):
                raise GuidanceError(f"{name}={x} outside bounds [{lo}, {hi}]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_params(cls, params: PipelineParams, bounds=None) -> "ParamVector":
        vals = ([getattr(params.shape, n) for n in _SHAPE_NAMES]
                + [getattr(params.tree, n) for n in _TREE_NAMES]
                + [getattr(params.pattern, n) for n in _PATTERN_NAMES])
        return cls(np.array(vals), bounds or tuple(DEFAULT_BOUNDS[n] for n in PARAM_NAMES))

    @classmethod
    def defaults(cls, bounds=None) -> "ParamVector":
        return cls.from_params(PipelineParams(), bounds)

    def to_params(self) -> PipelineParams:
        d = dict(zip(PARAM_NAMES, self.values))
        return PipelineParams(
            shape=ShapeParams(**{n: d[n] for n in _SHAPE_NAMES}),
            tree=TreeParams(**{n: d[n] for n in _TREE_NAMES}),
            pattern=PatternParams(**{n: d[n] for n in _PATTERN_NAMES}),
        )

    def with_value(self, name: str, value: float) -> "ParamVector":
        i = PARAM_NAMES.index(name)
        lo, hi = self.bounds[i]
        v = self.values.copy()
        v[i] = min(max(value, lo), hi)
        return ParamVector(v, self.bounds)

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, (float(x) for x in self.values)))


# ---------------------------------------------------------------------------
# cheap pipeline approximator f


class _SegmentationCache:
    """Components keyed by quantized shape parameters (3 decimals)."""

    def __init__(self, max_entries: int = 64):
        self.max_entries = max_entries
        self._store: dict = {}

    def key(self, shape: ShapeParams, seed: int) -> tuple:
        return (round(shape.theta_den, 3), round(shape.theta_num, 3), seed)

    def get(self, model: Model, shape: ShapeParams, seed: int):
        key = (id(model), self.key(shape, seed))
        if key not in self._store:
            if len(self._store) >= self.max_entries:
                self._store.pop(next(iter(self._store)))
            self._store[key] = extract_components(model, shape, seed)
        return self._store[key]


_GLOBAL_CACHE = _SegmentationCache()


def _approx_labels(comps, theta_geo: float) -> dict:
    """Greedy descriptor labeling: local-extent hull plus size ratio, the
    cheap stand-in for pairwise similarity scoring."""
    labels: dict = {}
    groups: list = []  # (extents, n_elements, diag, label)
    for comp in sorted(comps, key=lambda c: c.id):
        ext = np.sort(comp.local_bbox.extents)[::-1]
        diag = comp.bbox.diagonal
        placed = False
        for gext, gn, gdiag, lab in groups:
            eps = 0.01 * max(diag, gdiag, 1e-30)
            ratios = (np.minimum(ext, gext) + eps) / (np.maximum(ext, gext) + eps)
            hull = float(np.prod(ratios) ** (1.0 / 3.0))
            size = min(comp.n_elements, gn) / max(comp.n_elements, gn)
            if 0.4 * hull + 0.4 * size + 0.2 >= theta_geo:
                labels[comp.id] = lab
                placed = True
                break
        if not placed:
            lab = len(groups)
            groups.append((ext, comp.n_elements, diag, lab))
            labels[comp.id] = lab
    return labels


def _approx_parents(comps, diagonal: float) -> dict:
    """Tightest-bbox containment parent per component (vectorized)."""
    mins = np.stack([c.bbox.min_point for c in comps])
    maxs = np.stack([c.bbox.max_point for c in comps])
    measure = np.prod(np.maximum(maxs - mins, 1e-9 * diagonal), axis=1)
    slack = 1e-6 * diagonal
    n = len(comps)
    inside = (
        (mins[None, :, :] >= mins[:, None, :] - slack).all(axis=2)
        & (maxs[None, :, :] <= maxs[:, None, :] + slack).all(axis=2)
    )  # inside[i, j]: comp j fits in comp i
    np.fill_diagonal(inside, False)
    parents: dict = {}
    for j in range(n):
        strict = inside[:, j] & (measure > measure[j])
        # loose fallback with half-extent slack, mirroring tree insertion
        s = np.maximum(slack, 0.5 * (maxs[j] - mins[j]))
        near = ((mins[j] >= mins - s).all(axis=1)
                & (maxs[j] <= maxs + s).all(axis=1)
                & (measure > measure[j]))
        near[j] = False
        cand = np.flatnonzero(strict | near)
        parents[j] = int(cand[np.argmin(measure[cand])]) if len(cand) else None
    return parents


def approximate_f(theta: ParamVector, model: Model, seed: int = 0,
                  cache: _SegmentationCache | None = None) -> GrammarValues:
    """Cheap estimate of evaluate(proceduralize(model, theta)).

    Runs component extraction (cached), then label/containment statistics
    without pairwise similarity, tree materialization, or grammar export.
    """
    assert all(lo <= x <= hi for x, (lo, hi) in zip(theta.values, theta.bounds)), \
        "approximate_f evaluated outside bounds"
    params = theta.to_params()
    cache = cache or _GLOBAL_CACHE
    ext = cache.get(model, params.shape, seed)
    if ext is None:
        return GrammarValues(1, 0, 0.0, 1)
    comps, _ = ext
    if len(comps) == 1:
        return GrammarValues(1, 0, 0.0, 1)
    labels = _approx_labels(comps, params.shape.theta_geo)
    parents = _approx_parents(comps, model.diagonal)
    children: dict = {i: [] for i in range(len(comps))}
    for j, p in parents.items():
        if p is not None:
            children[p].append(j)
    # split labels by child-label multiset, mirroring subtree refinement
    def signature(i):
        return (labels[i], tuple(sorted(labels[c] for c in children[i])))

    sig_label: dict = {}
    final: dict = {}
    for i in range(len(comps)):
        s = signature(i)
        sig_label.setdefault(s, len(sig_label))
        final[i] = sig_label[s]
    top = [i for i, p in parents.items() if p is None]
    synthetic_root = len(top) > 1
    leaf_labels = set()
    internal_labels = set()
    for i in range(len(comps)):
        lab = final[i]
        if children[i] or (not synthetic_root and parents[i] is None):
            internal_labels.add(lab)
        else:
            leaf_labels.add(lab)
    leaf_labels -= internal_labels
    # one rule per (child label, parent label); fanout = members per parent
    rule_groups: dict = {}
    for i in range(len(comps)):
        p = parents[i]
        plab = final[p] if p is not None else -1
        key = (final[i], plab)
        rule_groups.setdefault(key, []).append(p)
    fans = []
    for (clab, plab), ps in rule_groups.items():
        if plab == -1 and not synthetic_root:
            continue  # the root symbol is not produced by a rule
        fans.append(len(ps) / max(len(set(ps)), 1))
    fan = float(np.mean(fans)) if fans else 0.0
    non = len(internal_labels) + (1 if synthetic_root else 0)
    return GrammarValues(
        alp=len(leaf_labels),
        non=non,
        fan=fan,
        rep=len(comps) + (1 if synthetic_root else 0),
    )


# ---------------------------------------------------------------------------
# optimization


@dataclass
class GuidanceState:
    """Mutable search state: best iterate, trace, and budget accounting."""

    budget: int = DEFAULT_BUDGET
    seed: int = 0
    warm_theta: ParamVector | None = None
    bounds: tuple | None = None
    should_stop: object = None  # optional callable polled between evaluations
    cancelled: bool = False
    best_theta: ParamVector | None = None
    best_values: GrammarValues | None = None
    best_phi: float = math.inf
    best_grammar: SplitGrammar | None = None
    trace: list = field(default_factory=list)
    evaluations: int = 0
    converged: bool = False

    def record(self, theta: ParamVector, values: GrammarValues, phi: float) -> bool:
        """Record an evaluation; returns True when accepted as new best."""
        self.evaluations += 1
        if phi < self.best_phi:
            self.best_phi = phi
            self.best_theta = theta
            self.best_values = values
            self.trace.append({
                "iteration": self.evaluations,
                **{f"theta_{k}": v for k, v in theta.as_dict().items()},
                **{f"gamma_{k}": v for k, v in values.as_dict().items()},
                "phi": phi,
            })
            return True
        return False


class _SearchCancelled(Exception):
    """Raised internally when a should_stop callback fires mid-search."""


# deterministic granularity sweep for the region-count dimension
def _num_candidates(lo: float, hi: float) -> list:
    vals = []
    v = max(lo, 1.0)
    while v < hi:
        vals.append(v)
        v *= 1.5
    vals.append(hi)
    return vals


def optimize(model: Model, target: TargetSpec, state: GuidanceState | None = None,
             cache: _SegmentationCache | None = None) -> GuidanceState:
    """Bound-constrained derivative-free minimization of Phi(f(theta), target)."""
    state = state or GuidanceState()
    if state.budget <= 0:
        raise GuidanceError("evaluation budget must be positive")
    bounds = state.bounds or tuple(DEFAULT_BOUNDS[n] for n in PARAM_NAMES)
    cache = cache or _SegmentationCache()
    rng = np.random.default_rng(state.seed)
    seen: set = set()
    confirmed_failures: set = set()

    def phi_of(theta: ParamVector):
        if callable(state.should_stop) and state.should_stop():
            state.cancelled = True
            raise _SearchCancelled()
        key = tuple(np.round(theta.values, 9))
        if key in seen:
            return None
        seen.add(key)
        values = approximate_f(theta, model, seed=state.seed, cache=cache)
        phi = error(values, target)
        state.record(theta, values, phi)
        return phi

    def confirm(theta: ParamVector) -> bool:
        """Full pipeline at theta; accepts when the true Phi converges."""
        key = tuple(np.round(theta.values, 9))
        if key in confirmed_failures:
            return False
        result = proceduralize(model, theta.to_params(), seed=state.seed)
        values = evaluate(result.grammar)
        phi = error(values, target)
        if phi < target.epsilon:
            state.best_theta = theta
            state.best_values = values
            state.best_phi = phi
            state.best_grammar = result.grammar
            state.converged = True
            return True
        confirmed_failures.add(key)
        return False

    try:
        start = state.warm_theta or ParamVector.defaults(bounds)
        phi = phi_of(start)
        if phi is not None and phi < target.epsilon and confirm(start):
            return state
    except _SearchCancelled:
        return state

    def local_search() -> None:
        for step in (0.25, 0.1, 0.04, 0.015, 0.005):
            improved = True
            while improved and state.evaluations < state.budget:
                improved = False
                for i, name in enumerate(PARAM_NAMES):
                    lo, hi = bounds[i]
                    span = hi - lo
                    for sgn in (+1, -1):
                        if state.evaluations >= state.budget:
                            return
                        cand = state.best_theta.with_value(
                            name, float(state.best_theta.values[i]) + sgn * step * span)
                        p = phi_of(cand)
                        if p is None:
                            continue
                        if p < target.epsilon and confirm(cand):
                            return
                        if state.best_theta is cand:
                            improved = True

    def sweep_num() -> None:
        lo, hi = bounds[PARAM_NAMES.index("theta_num")]
        for v in _num_candidates(lo, hi):
            if state.evaluations >= state.budget or state.converged:
                return
            cand = state.best_theta.with_value("theta_num", v)
            p = phi_of(cand)
            if p is not None and p < target.epsilon and confirm(cand):
                return
        # integer refinement around the current best region count
        base = float(state.best_theta.values[PARAM_NAMES.index("theta_num")])
        for dv in (-3, -2, -1, 1, 2, 3):
            if state.evaluations >= state.budget or state.converged:
                return
            cand = state.best_theta.with_value("theta_num", round(base) + dv)
            p = phi_of(cand)
            if p is not None and p < target.epsilon and confirm(cand):
                return

    def global_samples(n: int) -> None:
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        # Latin hypercube, deterministic under the state seed
        u = (rng.permuted(np.tile(np.arange(n), (len(PARAM_NAMES), 1)), axis=1).T
             + rng.random((n, len(PARAM_NAMES)))) / n
        for row in u:
            if state.evaluations >= state.budget or state.converged:
                return
            cand = ParamVector(lo + row * (hi - lo), bounds)
            p = phi_of(cand)
            if p is not None and p < target.epsilon and confirm(cand):
                return

    try:
        sweep_num()
        if not state.converged:
            local_search()
        while not state.converged and state.evaluations < state.budget:
            global_samples(min(20, state.budget - state.evaluations))
            if state.converged or state.evaluations >= state.budget:
                break
            sweep_num()
            if not state.converged:
                local_search()
    except _SearchCancelled:
        return state

    if state.best_grammar is None:
        result = proceduralize(model, state.best_theta.to_params(), seed=state.seed)
        state.best_grammar = result.grammar
        state.best_values = evaluate(result.grammar)
        state.best_phi = error(state.best_values, target)
        state.converged = state.best_phi < target.epsilon
    return state


# ---------------------------------------------------------------------------
# grammar-family suggestion


def suggest_family(model: Model, samples: int, seed: int = 0,
                   budget: int = 60) -> list:
    """Sample the grammar-value space, optimize each target, and keep the
    structurally distinct results as (target, grammar, values) candidates."""
    if samples < 1:
        raise GuidanceError("samples must be >= 1")
    base = proceduralize(model, PipelineParams(), seed=seed)
    gamma0 = evaluate(base.grammar)
    rng = np.random.default_rng(seed)
    lo = np.array([1.0, 0.0, 0.0, 1.0])
    hi = np.array([max(g, l) for g, l in zip(
        (gamma0.alp, gamma0.non, gamma0.fan, gamma0.rep), lo)])
    u = (rng.permuted(np.tile(np.arange(samples), (4, 1)), axis=1).T
         + rng.random((samples, 4))) / samples
    out = []
    seen_gammas: list = []
    for k, row in enumerate(u):
        vals = lo + row * (hi - lo)
        target = TargetSpec(targets={
            "alp": max(1.0, round(vals[0])),
            "non": round(vals[1]),
        })
        state = GuidanceState(budget=budget, seed=seed + k)
        state = optimize(model, target, state)
        if state.best_grammar is None:
            continue
        gamma = evaluate(state.best_grammar)
        dup = any(
            all(abs(gamma.get(n) - g.get(n)) / max(g.get(n), 1.0) < target.epsilon
                for n in VALUE_NAMES)
            for g in seen_gammas
        )
        if dup:
            continue
        seen_gammas.append(gamma)
        out.append((target, state.best_grammar, gamma))
    return out


# ---------------------------------------------------------------------------
# config and trace plumbing


def load_guidance_config(path) -> dict:
    """JSON config: {targets, weights?, ranges?, epsilon?, budget?, seed?, bounds?}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    target = TargetSpec(
        targets={k: float(v) for k, v in raw["targets"].items()},
        weights={k: float(v) for k, v in raw.get("weights", {}).items()},
        ranges={k: tuple(v) for k, v in raw.get("ranges", {}).items()},
        epsilon=float(raw.get("epsilon", DEFAULT_EPSILON)),
    )
    bounds = None
    if "bounds" in raw:
        merged = dict(DEFAULT_BOUNDS)
        for k, v in raw["bounds"].items():
            if k not in PARAM_NAMES:
                raise GuidanceError(f"unknown parameter '{k}' in bounds")
            merged[k] = (float(v[0]), float(v[1]))
        bounds = tuple(merged[n] for n in PARAM_NAMES)
    return {
        "target": target,
        "budget": int(raw.get("budget", DEFAULT_BUDGET)),
        "seed": int(raw.get("seed", 0)),
        "bounds": bounds,
    }


def save_trace_csv(state: GuidanceState, path) -> None:
    cols = (["iteration"] + [f"theta_{n}" for n in PARAM_NAMES]
            + [f"gamma_{n}" for n in VALUE_NAMES] + ["phi"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in state.trace:
            writer.writerow(row)
