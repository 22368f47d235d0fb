"""Guided search: grammar value evaluation, the error measure, the cheap
pipeline approximator, and the derivative-free optimizer."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procgram.fixtures import (
    generate_grid_model,
    plain_window_cell,
    tower_model,
    unit_cube_mesh,
    window_cell,
)
from procgram.geometry import DataType, Model
from procgram.guidance import (
    GrammarValues,
    GuidanceError,
    GuidanceState,
    ParamVector,
    TargetSpec,
    approximate_f,
    error,
    evaluate,
    load_guidance_config,
    optimize,
    save_trace_csv,
    suggest_family,
)


class TestEvaluate:
    def test_grid_oracle(self, grid32_grammar):
        """Frozen oracle: 1 terminal, 2 nonterminals, mean fanout 5, 31
        instances for the 3x2 pane-window facade."""
        assert evaluate(grid32_grammar).as_dict() == {
            "alp": 1, "non": 2, "fan": 5.0, "rep": 31}

    def test_tower_oracle(self, tower_result):
        assert evaluate(tower_result.grammar).as_dict() == {
            "alp": 2, "non": 1, "fan": 5.0, "rep": 11}

    def test_values_validated(self):
        with pytest.raises(GuidanceError):
            GrammarValues(alp=-1, non=0, fan=0.0, rep=1)
        with pytest.raises(GuidanceError):
            GrammarValues(alp=5, non=0, fan=0.0, rep=2)


class TestError:
    def test_weighted_relative_l1(self):
        actual = GrammarValues(alp=1, non=2, fan=5.0, rep=31)
        target = TargetSpec(targets={"alp": 2, "rep": 40},
                            weights={"rep": 2.0})
        want = 1.0 * abs(1 - 2) / 2 + 2.0 * abs(31 - 40) / 40
        assert error(actual, target) == pytest.approx(want)

    def test_small_targets_clamp_denominator(self):
        actual = GrammarValues(alp=1, non=3, fan=0.0, rep=4)
        target = TargetSpec(targets={"non": 0})
        # denominator is max(target, 1) so a zero target cannot blow up
        assert error(actual, target) == pytest.approx(3.0)

    def test_exact_match_is_zero(self):
        actual = GrammarValues(alp=1, non=2, fan=5.0, rep=31)
        target = TargetSpec(targets=actual.as_dict())
        assert error(actual, target) == 0.0

    def test_target_validation(self):
        with pytest.raises(GuidanceError):
            TargetSpec(targets={})
        with pytest.raises(GuidanceError):
            TargetSpec(targets={"bogus": 1})
        with pytest.raises(GuidanceError):
            TargetSpec(targets={"alp": 1}, weights={"alp": -1})
        with pytest.raises(GuidanceError):
            TargetSpec(targets={"alp": 1}, ranges={"alp": (3, 1)})
        with pytest.raises(GuidanceError):
            TargetSpec(targets={"alp": 1}, epsilon=0.0)


class TestParamVector:
    def test_defaults_round_trip(self):
        theta = ParamVector.defaults()
        again = ParamVector.from_params(theta.to_params())
        assert np.array_equal(theta.values, again.values)

    def test_with_value_clamps_to_bounds(self):
        theta = ParamVector.defaults()
        bumped = theta.with_value("theta_geo", 99.0)
        i = list(theta.as_dict()).index("theta_geo")
        assert bumped.values[i] == theta.bounds[i][1]

    def test_wrong_length_rejected(self):
        with pytest.raises(GuidanceError):
            ParamVector(np.zeros(3))

    def test_out_of_bounds_rejected(self):
        theta = ParamVector.defaults()
        v = theta.values.copy()
        v[0] = theta.bounds[0][1] + 1.0
        with pytest.raises(GuidanceError):
            ParamVector(v, theta.bounds)


class TestApproximator:
    def test_matches_exact_on_grid(self, grid32):
        approx = approximate_f(ParamVector.defaults(), grid32)
        assert approx.as_dict() == {"alp": 1, "non": 2, "fan": 5.0, "rep": 31}

    def test_matches_exact_on_tower(self, tower):
        approx = approximate_f(ParamVector.defaults(), tower)
        assert approx.as_dict() == {"alp": 2, "non": 1, "fan": 5.0, "rep": 11}

    def test_single_component(self):
        approx = approximate_f(ParamVector.defaults(), unit_cube_mesh())
        assert approx.as_dict() == {"alp": 1, "non": 0, "fan": 0.0, "rep": 1}

    @given(geo=st.floats(0.3, 0.999))
    @settings(max_examples=10, deadline=None)
    def test_values_always_consistent(self, grid32, geo):
        theta = ParamVector.defaults().with_value("theta_geo", geo)
        vals = approximate_f(theta, grid32)
        assert vals.alp <= vals.rep
        assert vals.fan >= 0.0


class TestOptimize:
    def test_converges_on_reachable_target(self, grid32):
        target = TargetSpec(targets={"alp": 1, "non": 2, "fan": 5.0, "rep": 31})
        state = optimize(grid32, target, GuidanceState(budget=50, seed=0))
        assert state.converged
        assert state.best_phi < target.epsilon
        assert state.best_grammar is not None
        assert evaluate(state.best_grammar).as_dict() == {
            "alp": 1, "non": 2, "fan": 5.0, "rep": 31}

    def test_trace_phi_non_increasing(self, grid32):
        target = TargetSpec(targets={"alp": 1, "rep": 7})
        state = optimize(grid32, target, GuidanceState(budget=40, seed=0))
        phis = [row["phi"] for row in state.trace]
        assert phis == sorted(phis, reverse=True)
        assert state.evaluations <= 40

    def test_budget_respected(self, grid32):
        target = TargetSpec(targets={"rep": 10_000})  # unreachable
        state = optimize(grid32, target, GuidanceState(budget=25, seed=0))
        assert not state.converged
        assert state.evaluations <= 25
        assert state.best_grammar is not None  # best effort still reported

    def test_zero_budget_rejected(self, grid32):
        with pytest.raises(GuidanceError):
            optimize(grid32, TargetSpec(targets={"alp": 1}),
                     GuidanceState(budget=0))

    def test_cancellation_stops_search(self, grid32):
        calls = {"n": 0}

        def stop():
            calls["n"] += 1
            return calls["n"] > 5

        target = TargetSpec(targets={"rep": 10_000})
        state = optimize(grid32, target,
                         GuidanceState(budget=200, seed=0, should_stop=stop))
        assert state.cancelled
        assert state.evaluations <= 6

    def test_deterministic(self, grid32):
        target = TargetSpec(targets={"alp": 1, "rep": 7})
        a = optimize(grid32, target, GuidanceState(budget=30, seed=4))
        b = optimize(grid32, target, GuidanceState(budget=30, seed=4))
        assert a.evaluations == b.evaluations
        assert a.best_phi == b.best_phi
        assert np.array_equal(a.best_theta.values, b.best_theta.values)


class TestSuggest:
    def test_family_members_distinct(self, grid32):
        fam = suggest_family(grid32, samples=3, seed=0, budget=20)
        assert 1 <= len(fam) <= 3
        gammas = [g.as_dict() for _, _, g in fam]
        assert len({tuple(sorted(d.items())) for d in gammas}) == len(gammas)

    def test_bad_sample_count(self, grid32):
        with pytest.raises(GuidanceError):
            suggest_family(grid32, samples=0)


class TestConfigAndTrace:
    def test_config_round_trip(self, tmp_path):
        import json
        cfg = {"targets": {"alp": 1, "rep": 31}, "weights": {"rep": 2},
               "epsilon": 0.1, "budget": 77, "seed": 3,
               "bounds": {"theta_geo": [0.5, 0.99]}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        loaded = load_guidance_config(path)
        assert loaded["budget"] == 77
        assert loaded["seed"] == 3
        assert loaded["target"].epsilon == 0.1
        assert loaded["target"].weight("rep") == 2.0
        names = list(ParamVector.defaults().as_dict())
        assert loaded["bounds"][names.index("theta_geo")] == (0.5, 0.99)

    def test_unknown_bound_rejected(self, tmp_path):
        import json
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"targets": {"alp": 1},
                                    "bounds": {"nope": [0, 1]}}))
        with pytest.raises(GuidanceError):
            load_guidance_config(path)

    def test_trace_csv(self, tmp_path, grid32):
        target = TargetSpec(targets={"alp": 1, "rep": 31})
        state = optimize(grid32, target, GuidanceState(budget=20, seed=0))
        out = tmp_path / "trace.csv"
        save_trace_csv(state, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("iteration,")
        assert len(lines) == len(state.trace) + 1
