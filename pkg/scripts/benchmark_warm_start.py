#!/usr/bin/env python3
"""Re-targeting benchmark: evaluation counts for cold vs warm-started
optimization over 5 seeds."""
from __future__ import annotations

import numpy as np

from procgram.fixtures import displace_vertices, generate_grid_model, window_cell
from procgram.guidance import GuidanceState, TargetSpec, optimize


def main() -> None:
    grid = generate_grid_model(3, 2, window_cell(), seed=0)
    noisy = displace_vertices(grid, 0.001, seed=3)
    first = TargetSpec(targets={"alp": 1, "non": 2, "fan": 5.0, "rep": 31})
    retarget = TargetSpec(targets={"alp": 1, "non": 2, "fan": 5.0})
    colds, warms = [], []
    for seed in range(5):
        prior = optimize(noisy, first, GuidanceState(budget=200, seed=seed))
        cold = optimize(noisy, retarget, GuidanceState(budget=200, seed=seed))
        warm = optimize(noisy, retarget,
                        GuidanceState(budget=200, seed=seed,
                                      warm_theta=prior.best_theta))
        colds.append(cold.evaluations)
        warms.append(warm.evaluations)
        print(f"seed {seed}: cold {cold.evaluations:3d} evals "
              f"(converged={cold.converged})  warm {warm.evaluations:3d} "
              f"(converged={warm.converged})")
    ratio = float(np.median(warms)) / float(np.median(colds))
    print(f"median cold {np.median(colds):.0f}  median warm "
          f"{np.median(warms):.0f}  ratio {ratio:.2f} (bar: 0.5)")


if __name__ == "__main__":
    main()
