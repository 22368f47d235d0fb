"""Command-line interface: the command surface and the 0/1/2 exit-code
contract (success / domain error / usage error)."""
from __future__ import annotations

import json

import numpy as np
import pytest
from click.testing import CliRunner

from procgram.cli import main
from procgram.fixtures import ablated_instance_row, generate_grid_model, window_cell
from procgram.io import save_model


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def grid_obj(tmp_path_factory, grid32):
    path = tmp_path_factory.mktemp("cli") / "grid.obj"
    save_model(grid32, path)
    return path


@pytest.fixture(scope="module")
def grid_grammar_path(tmp_path_factory, runner, grid_obj):
    out = tmp_path_factory.mktemp("cli-g") / "g.json"
    res = runner.invoke(main, ["proceduralize", "-i", str(grid_obj), "-o", str(out)])
    assert res.exit_code == 0, res.output
    return out


class TestProceduralize:
    def test_default_pass(self, runner, grid_obj, tmp_path):
        out = tmp_path / "g.json"
        res = runner.invoke(main, ["proceduralize", "-i", str(grid_obj),
                                   "-o", str(out)])
        assert res.exit_code == 0
        summary = json.loads(res.output)
        assert summary["gamma"] == {"alp": 1, "non": 2, "fan": 5.0, "rep": 31}
        assert out.exists()

    def test_targeted_run_converges(self, runner, grid_obj, tmp_path):
        out = tmp_path / "g.json"
        trace = tmp_path / "trace.csv"
        res = runner.invoke(main, [
            "proceduralize", "-i", str(grid_obj), "-o", str(out),
            "--target", "alp=1,non=2,fan=5,rep=31", "--budget", "50",
            "--trace", str(trace)])
        assert res.exit_code == 0, res.output
        summary = json.loads(res.output)
        assert summary["converged"] is True
        assert summary["phi"] < 0.05
        assert trace.read_text().startswith("iteration,")

    def test_config_run(self, runner, grid_obj, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"targets": {"alp": 1, "non": 2},
                                   "budget": 30}))
        out = tmp_path / "g.json"
        res = runner.invoke(main, ["proceduralize", "-i", str(grid_obj),
                                   "-o", str(out), "-c", str(cfg)])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["converged"] is True

    def test_target_and_config_conflict_is_usage_error(self, runner, grid_obj,
                                                       tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"targets": {"alp": 1}}))
        res = runner.invoke(main, [
            "proceduralize", "-i", str(grid_obj), "-o", str(tmp_path / "g.json"),
            "--target", "alp=1", "-c", str(cfg)])
        assert res.exit_code == 2

    def test_malformed_target_is_usage_error(self, runner, grid_obj, tmp_path):
        res = runner.invoke(main, [
            "proceduralize", "-i", str(grid_obj), "-o", str(tmp_path / "g.json"),
            "--target", "alp"])
        assert res.exit_code == 2

    def test_unparsable_model_is_domain_error(self, runner, tmp_path):
        bad = tmp_path / "bad.obj"
        bad.write_text("v 0 0 0\nf 1 2\n")
        res = runner.invoke(main, ["proceduralize", "-i", str(bad),
                                   "-o", str(tmp_path / "g.json")])
        assert res.exit_code == 1
        assert "error:" in res.output


class TestEvaluate:
    def test_prints_gamma(self, runner, grid_grammar_path):
        res = runner.invoke(main, ["evaluate", str(grid_grammar_path)])
        assert res.exit_code == 0
        assert json.loads(res.output) == {"alp": 1, "non": 2, "fan": 5.0,
                                          "rep": 31}

    def test_corrupt_grammar_is_domain_error(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        res = runner.invoke(main, ["evaluate", str(bad)])
        assert res.exit_code == 1


class TestDerive:
    def test_round_trip_instances(self, runner, grid_grammar_path, tmp_path):
        out = tmp_path / "model.obj"
        res = runner.invoke(main, ["derive", str(grid_grammar_path),
                                   "-o", str(out)])
        assert res.exit_code == 0
        assert json.loads(res.output)["instances"] == 31
        assert out.exists()

    def test_override_changes_counts(self, runner, grid_grammar_path, tmp_path):
        out = tmp_path / "model.obj"
        res = runner.invoke(main, [
            "derive", str(grid_grammar_path), "-o", str(out),
            "--override", "rule:T2.rep=4x5"])
        assert res.exit_code == 0
        assert json.loads(res.output)["instances"] == 127

    def test_unknown_rule_is_domain_error(self, runner, grid_grammar_path,
                                          tmp_path):
        res = runner.invoke(main, [
            "derive", str(grid_grammar_path), "-o", str(tmp_path / "m.obj"),
            "--override", "rule:ZZ.rep=2x2"])
        assert res.exit_code == 1

    def test_malformed_override_is_usage_error(self, runner, grid_grammar_path,
                                               tmp_path):
        res = runner.invoke(main, [
            "derive", str(grid_grammar_path), "-o", str(tmp_path / "m.obj"),
            "--override", "T2=4x5"])
        assert res.exit_code == 2

    def test_zero_repetition_is_usage_error(self, runner, grid_grammar_path,
                                            tmp_path):
        res = runner.invoke(main, [
            "derive", str(grid_grammar_path), "-o", str(tmp_path / "m.obj"),
            "--override", "rule:T2.rep=0x2"])
        assert res.exit_code == 2


class TestComplete:
    def test_fills_holes_with_stats(self, runner, tmp_path):
        model, _, _ = ablated_instance_row(seed=0)
        src = tmp_path / "row.xyz"
        save_model(model, src)
        out = tmp_path / "full.xyz"
        res = runner.invoke(main, [
            "complete", "-i", str(src), "-o", str(out),
            "--granularity", "6", "--geo-threshold", "0.5"])
        assert res.exit_code == 0, res.output
        stats = json.loads(res.output)
        assert stats["voxels_lost"] == 0
        assert 15.0 <= stats["point_gain_pct"] <= 30.0
        assert out.exists()


class TestSuggest:
    def test_writes_candidates(self, runner, grid_obj, tmp_path):
        out = tmp_path / "fam"
        res = runner.invoke(main, ["suggest", "-i", str(grid_obj),
                                   "-o", str(out), "--samples", "2"])
        assert res.exit_code == 0, res.output
        entries = json.loads(res.output)
        assert len(entries) >= 1
        for e in entries:
            assert (out / f"candidate{e['index']}" / "grammar.json").exists()


class TestUsage:
    def test_unknown_command(self, runner):
        assert runner.invoke(main, ["frobnicate"]).exit_code == 2

    def test_missing_required_option(self, runner):
        assert runner.invoke(main, ["proceduralize"]).exit_code == 2

    def test_missing_input_file(self, runner, tmp_path):
        res = runner.invoke(main, ["proceduralize", "-i",
                                   str(tmp_path / "absent.obj"),
                                   "-o", str(tmp_path / "g.json")])
        assert res.exit_code == 2  # click validates exists=True paths
