#!/usr/bin/env python3
"""Compression experiment: grammar JSON + geometry sidecars vs source OBJ
bytes on n x n window grids."""
from __future__ import annotations

import tempfile
from pathlib import Path

from procgram.fixtures import generate_grid_model, window_cell
from procgram.grammar import save_grammar
from procgram.io import save_obj
from procgram.pipeline import PipelineParams, proceduralize


def main() -> None:
    for n in (3, 5, 10):
        model = generate_grid_model(n, n, window_cell(), seed=0)
        grammar = proceduralize(model, PipelineParams(), seed=0).grammar
        with tempfile.TemporaryDirectory() as td:
            td = Path(td)
            save_obj(model, td / "model.obj")
            save_grammar(grammar, td / "grammar.json")
            obj_bytes = (td / "model.obj").stat().st_size
            grammar_bytes = sum(p.stat().st_size for p in td.iterdir()
                                if p.name != "model.obj")
        print(f"{n}x{n} grid: obj {obj_bytes:>8d} B  "
              f"grammar+sidecars {grammar_bytes:>6d} B  "
              f"ratio {100 * grammar_bytes / obj_bytes:5.1f}%")


if __name__ == "__main__":
    main()
