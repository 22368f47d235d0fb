"""Shared fixtures: canonical models and their extracted grammars.

Expensive pipeline runs are session-scoped so the suite stays fast.
"""
from __future__ import annotations

import pytest

from procgram.fixtures import (
    generate_grid_model,
    mixed_grid_model,
    tower_model,
    window_cell,
)
from procgram.pipeline import PipelineParams, proceduralize


@pytest.fixture(scope="session")
def grid32():
    """3x2 grid of pane windows over a wall: the canonical facade fixture."""
    return generate_grid_model(3, 2, window_cell(), seed=0)


@pytest.fixture(scope="session")
def grid32_result(grid32):
    return proceduralize(grid32, PipelineParams(), seed=0)


@pytest.fixture(scope="session")
def grid32_grammar(grid32_result):
    return grid32_result.grammar


@pytest.fixture(scope="session")
def tower():
    return tower_model()


@pytest.fixture(scope="session")
def tower_result(tower):
    return proceduralize(tower, PipelineParams(), seed=0)


@pytest.fixture(scope="session")
def mixed_grid():
    return mixed_grid_model()
