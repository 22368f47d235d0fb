"""Command-line interface: proceduralize, evaluate, derive, suggest,
complete, and serve.

Exit codes: 0 success, 1 domain error (bad geometry, failed parse, ...),
2 usage error (unknown flags, missing arguments).
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .completion import apply_consensus, completion_stats, consensus_for_labels
from .geometry import GeometryError
from .grammar import derive, load_grammar, save_grammar
from .guidance import (
    DEFAULT_BUDGET,
    DEFAULT_EPSILON,
    GuidanceState,
    TargetSpec,
    evaluate,
    load_guidance_config,
    optimize,
    save_trace_csv,
    suggest_family,
)
from .io import ParseError, load_model, save_model
from .pipeline import PipelineParams, proceduralize
from .segmentation import ShapeParams, segment

DOMAIN_ERRORS = (GeometryError, ParseError, OSError, json.JSONDecodeError, KeyError)


def domain_errors(fn):
    """Map domain failures to exit code 1; click keeps 2 for usage errors."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DOMAIN_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _parse_target_string(text: str) -> dict:
    targets = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise click.UsageError(f"target entry '{part}' is not name=value")
        name, _, value = part.partition("=")
        try:
            targets[name.strip()] = float(value)
        except ValueError:
            raise click.UsageError(f"target value '{value}' is not a number")
    if not targets:
        raise click.UsageError("empty target specification")
    return targets


@click.group()
def main() -> None:
    """Split-grammar extraction, guidance, derivation, and completion."""


@main.command("proceduralize")
@click.option("-i", "--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", "output_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--target", "target_str", default=None,
              help="Comma-separated grammar-value targets, e.g. alp=1,non=2.")
@click.option("-c", "--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON guidance config (targets/weights/bounds/budget).")
@click.option("--epsilon", type=float, default=DEFAULT_EPSILON, show_default=True)
@click.option("--budget", type=int, default=DEFAULT_BUDGET, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trace", "trace_path", default=None,
              type=click.Path(dir_okay=False),
              help="Write the optimization trace as CSV.")
@domain_errors
def cmd_proceduralize(input_path, output_path, target_str, config_path,
                      epsilon, budget, seed, trace_path) -> None:
    """Extract a grammar; with a target, optimize parameters toward it."""
    if target_str and config_path:
        raise click.UsageError("--target and --config are mutually exclusive")
    model = load_model(input_path)
    if not target_str and not config_path:
        result = proceduralize(model, PipelineParams(), seed=seed)
        grammar = result.grammar
        summary = {"converged": None, "phi": None,
                   "gamma": evaluate(grammar).as_dict(), "evaluations": 0}
    else:
        if config_path:
            cfg = load_guidance_config(config_path)
            target, bounds = cfg["target"], cfg["bounds"]
            budget, seed = cfg["budget"], cfg["seed"]
        else:
            target = TargetSpec(targets=_parse_target_string(target_str),
                                epsilon=epsilon)
            bounds = None
        state = GuidanceState(budget=budget, seed=seed, bounds=bounds)
        state = optimize(model, target, state)
        if trace_path:
            save_trace_csv(state, trace_path)
        grammar = state.best_grammar
        if grammar is None:
            raise GeometryError("optimization produced no grammar")
        summary = {"converged": state.converged, "phi": state.best_phi,
                   "gamma": state.best_values.as_dict(),
                   "evaluations": state.evaluations}
    save_grammar(grammar, output_path)
    summary["output"] = str(output_path)
    click.echo(json.dumps(summary, indent=1))


@main.command("evaluate")
@click.argument("grammar_path", type=click.Path(exists=True, dir_okay=False))
@domain_errors
def cmd_evaluate(grammar_path) -> None:
    """Print the grammar values of a saved grammar as JSON."""
    grammar = load_grammar(grammar_path)
    click.echo(json.dumps(evaluate(grammar).as_dict(), indent=1))


def _resolve_override(grammar, key: str):
    """Accept 'lhs->produces', a produced symbol id, or a symbol label."""
    symbols = {**grammar.terminals, **grammar.nonterminals}
    for rule in grammar.rules:
        names = {f"{rule.lhs}->{rule.produces}", rule.produces,
                 str(symbols[rule.produces].label)}
        if key in names:
            return f"{rule.lhs}->{rule.produces}"
    raise GeometryError(f"no rule matches '{key}'")


def _parse_repetition(text: str) -> tuple:
    parts = [p for p in text.lower().split("x") if p]
    try:
        rep = tuple(int(p) for p in parts)
    except ValueError:
        raise click.UsageError(f"repetition '{text}' is not like 4x5")
    if not rep or len(rep) > 3 or any(r < 1 for r in rep):
        raise click.UsageError(f"repetition '{text}' must be 1-3 counts >= 1")
    return rep + (1,) * (3 - len(rep))


@main.command("derive")
@click.argument("grammar_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", "output_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--override", "overrides", multiple=True,
              help="rule:<name>.rep=<AxB> repetition override; repeatable.")
@domain_errors
def cmd_derive(grammar_path, output_path, overrides) -> None:
    """Expand a grammar back into geometry, optionally re-parameterized."""
    grammar = load_grammar(grammar_path)
    parsed: dict = {}
    for text in overrides:
        if not text.startswith("rule:") or ".rep=" not in text:
            raise click.UsageError(
                f"override '{text}' is not rule:<name>.rep=<AxB>")
        name, _, rep_text = text[len("rule:"):].partition(".rep=")
        parsed[_resolve_override(grammar, name)] = {
            "repetition": _parse_repetition(rep_text)}
    derivation = derive(grammar, overrides=parsed or None)
    save_model(derivation.model, output_path)
    click.echo(json.dumps({"instances": derivation.n_instances,
                           "output": str(output_path)}, indent=1))


@main.command("suggest")
@click.option("-i", "--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", "output_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--samples", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@domain_errors
def cmd_suggest(input_path, output_dir, samples, seed) -> None:
    """Sample distinct candidate grammars and write one file per candidate."""
    model = load_model(input_path)
    candidates = suggest_family(model, samples, seed=seed)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (target, grammar, gamma) in enumerate(candidates):
        path = out / f"candidate{k}" / "grammar.json"
        save_grammar(grammar, path)
        entries.append({"index": k, "target": dict(target.targets),
                        "gamma": gamma.as_dict(), "grammar": str(path)})
    click.echo(json.dumps(entries, indent=1))


@main.command("complete")
@click.option("-i", "--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", "output_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--granularity", type=float, default=None,
              help="Region-count segmentation parameter override.")
@click.option("--geo-threshold", type=float, default=None,
              help="Similarity-labeling threshold override.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stats/--no-stats", default=True, show_default=True)
@domain_errors
def cmd_complete(input_path, output_path, granularity, geo_threshold,
                 seed, stats) -> None:
    """Fill holes in a point cloud from its repeated instances."""
    model = load_model(input_path)
    kwargs = {}
    if granularity is not None:
        kwargs["theta_num"] = granularity
    if geo_threshold is not None:
        kwargs["theta_geo"] = geo_threshold
    components = segment(model, ShapeParams(**kwargs), seed=seed)
    cms = consensus_for_labels(components)
    completed = apply_consensus(model, components, cms)
    save_model(completed, output_path)
    if stats:
        click.echo(json.dumps(completion_stats(model, completed), indent=1))


@main.command("serve")
@click.option("--port", type=int, default=8571, show_default=True)
@click.option("--data-dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=None,
              help="Worker pool size; defaults to the CPU count.")
@domain_errors
def cmd_serve(port, data_dir, workers) -> None:
    """Run the HTTP job service."""
    from .service import serve

    Path(data_dir).mkdir(parents=True, exist_ok=True)
    serve(port, data_dir, workers)


if __name__ == "__main__":
    main()
