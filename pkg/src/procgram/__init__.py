"""procgram: guided split-grammar extraction from architectural geometry.

Converts meshes and point clouds into split grammars whose specification
values (alphabet size, non-terminal count, repetitions, component count)
are steered toward user targets by a bound-constrained derivative-free
optimization loop.
"""

__version__ = "0.1.0"
