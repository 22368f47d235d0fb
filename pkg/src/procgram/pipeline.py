"""End-to-end proceduralization: model -> components -> tree -> grammar."""
from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import ComponentSet, Model
from .grammar import (
    PatternParams,
    SplitGrammar,
    export_grammar,
    extract_patterns,
)
from .segmentation import ShapeParams, segment
from .tree import (
    InstanceTree,
    TreeParams,
    build_tree,
    canonicalize_join,
    refine_labels,
    refreshed_representatives,
)


@dataclass(frozen=True)
class PipelineParams:
    """The full parameter vector Theta, grouped by stage."""

    shape: ShapeParams = field(default_factory=ShapeParams)
    tree: TreeParams = field(default_factory=TreeParams)
    pattern: PatternParams = field(default_factory=PatternParams)


@dataclass(frozen=True)
class PipelineResult:
    grammar: SplitGrammar
    tree: InstanceTree
    representatives: tuple
    components: ComponentSet


def proceduralize(model: Model, params: PipelineParams | None = None,
                  seed: int = 0) -> PipelineResult:
    params = params or PipelineParams()
    components = segment(model, params.shape, seed=seed)
    tree = build_tree(components)
    tree, reps = refine_labels(tree, params.tree)
    for rep in reps:
        tree = canonicalize_join(tree, rep)
    reps = refreshed_representatives(tree, reps)
    rules = extract_patterns(tree, reps, params.pattern)
    grammar = export_grammar(tree, rules, component_set=components,
                             meta={"seed": seed})
    return PipelineResult(grammar, tree, tuple(reps), components)
