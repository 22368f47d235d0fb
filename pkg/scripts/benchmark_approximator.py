#!/usr/bin/env python3
"""Benchmark the cheap pipeline approximator against the full pipeline on
the 12-fixture corpus: per-component agreement and wall time."""
from __future__ import annotations

import time

from procgram.fixtures import (
    box_surface_cloud,
    generate_grid_model,
    mixed_grid_model,
    plain_window_cell,
    rotor_model,
    tower_model,
    unit_cube_mesh,
    window_cell,
)
from procgram.geometry import DataType, Model
from procgram.guidance import ParamVector, approximate_f, evaluate
from procgram.pipeline import PipelineParams, proceduralize


def corpus() -> dict:
    return {
        "grid32": generate_grid_model(3, 2, window_cell(), seed=0),
        "grid32_plain": generate_grid_model(3, 2, plain_window_cell(), seed=0),
        "grid11": generate_grid_model(1, 1, plain_window_cell(), seed=0),
        "grid22": generate_grid_model(2, 2, window_cell(), seed=0),
        "grid44_plain": generate_grid_model(4, 4, plain_window_cell(), seed=0),
        "mixed": mixed_grid_model(),
        "tower5": tower_model(floors=5),
        "tower3": tower_model(floors=3),
        "rotor6": rotor_model(),
        "rotor8": rotor_model(n_fins=8, step_deg=45.0),
        "cube": unit_cube_mesh(),
        "box_cloud": Model(DataType.POINT_CLOUD,
                           points=box_surface_cloud(400, seed=0)),
    }


def main() -> None:
    theta = ParamVector.defaults()
    t_full = t_approx = 0.0
    worst = 0.0
    for name, model in corpus().items():
        t0 = time.perf_counter()
        exact = evaluate(proceduralize(model, PipelineParams(), seed=0).grammar)
        t_full += time.perf_counter() - t0
        t0 = time.perf_counter()
        approx = approximate_f(theta, model, cache=None)
        t_approx += time.perf_counter() - t0
        errs = {k: abs(approx.get(k) - exact.get(k)) / max(exact.get(k), 1)
                for k in ("alp", "non", "fan", "rep")}
        worst = max(worst, max(errs.values()))
        print(f"{name:14s} exact {exact.as_dict()}  approx {approx.as_dict()}"
              f"  max rel err {max(errs.values()):.3f}")
    print(f"worst relative error {worst:.3f} (bar: 0.05)")
    print(f"approximator {t_approx:.3f}s vs pipeline {t_full:.3f}s "
          f"({t_approx / t_full:.2f}x, bar: 0.5x)")


if __name__ == "__main__":
    main()
