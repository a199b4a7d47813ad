"""Command-line client tests; all service traffic stays in process."""

import json
import subprocess
import sys

import pytest

from neurodiff.cli import (_report_outcome, _request_body, build_parser, main)
from neurodiff.experiments import run_experiment


class TestParsing:
    def test_requires_an_experiment_id(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 3

    def test_bad_flag_exits_3_not_2(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["lotka-solve", "--voltage", "9"])
        assert exc.value.code == 3

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"reltol": 1e-4, "seed": 3}')
        args = build_parser().parse_args(
            ["sde-demo", "--config", str(cfg), "--seed", "5"])
        body = _request_body(args)
        assert body == {"reltol": 1e-4, "seed": 5}

    def test_config_file_must_exist(self, tmp_path):
        args = build_parser().parse_args(
            ["sde-demo", "--config", str(tmp_path / "missing.json")])
        with pytest.raises(ValueError, match="cannot read"):
            _request_body(args)

    def test_config_file_must_be_json_object(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        args = build_parser().parse_args(["sde-demo", "--config", str(cfg)])
        with pytest.raises(ValueError, match="JSON object"):
            _request_body(args)

    def test_config_file_rejects_unknown_keys(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"voltage": 9}')
        args = build_parser().parse_args(["sde-demo", "--config", str(cfg)])
        with pytest.raises(ValueError, match="voltage"):
            _request_body(args)


class TestOutcomeMapping:
    def test_solver_error_maps_to_2(self, tmp_path, capsys):
        code = _report_outcome("x", 500, {"detail": "boom", "kind": "solver-error"},
                               tmp_path)
        assert code == 2

    def test_config_error_statuses_map_to_3(self, tmp_path):
        for status in (400, 404, 422):
            assert _report_outcome("x", status, {"detail": "no"}, tmp_path) == 3

    def test_unexpected_status_maps_to_2(self, tmp_path):
        assert _report_outcome("x", 503, {"detail": "gone"}, tmp_path) == 2


class TestList:
    def test_prints_every_id(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert "lotka-solve" in out
        assert len(out) == 8

    def test_mixing_list_with_ids_is_an_error(self, capsys):
        assert main(["list", "lotka-solve"]) == 3

    def test_mixing_serve_with_ids_is_an_error(self, capsys):
        assert main(["serve", "lotka-solve"]) == 3


class TestRun:
    def test_single_experiment_writes_artifacts(self, tmp_path, capsys):
        assert main(["lotka-solve", "--out", str(tmp_path)]) == 0
        exp_dir = tmp_path / "lotka-solve"
        assert (exp_dir / "trajectory.csv").exists()
        summary = json.loads((exp_dir / "summary.json").read_text())
        assert summary["passed"] is True
        assert summary["n_nodes"] == 101
        out = capsys.readouterr().out
        assert "lotka-solve: PASS" in out

    def test_summary_file_matches_library_serialization(self, tmp_path, capsys):
        main(["lotka-solve", "--out", str(tmp_path)])
        written = (tmp_path / "lotka-solve" / "summary.json").read_text()
        assert written == run_experiment("lotka-solve").summary_json()

    def test_artifact_files_match_library_output(self, tmp_path, capsys):
        main(["lotka-solve", "--out", str(tmp_path)])
        written = (tmp_path / "lotka-solve" / "trajectory.csv").read_text()
        assert written == run_experiment("lotka-solve").artifacts["trajectory.csv"]

    def test_failed_assertion_exits_1(self, tmp_path, capsys):
        code = main(["lotka-fit", "--iters", "2", "--out", str(tmp_path)])
        assert code == 1
        assert "FAIL" in capsys.readouterr().out
        assert (tmp_path / "lotka-fit" / "summary.json").exists()

    def test_unknown_id_exits_3(self, tmp_path, capsys):
        assert main(["ghost", "--out", str(tmp_path)]) == 3

    def test_bad_backend_exits_3(self, tmp_path, capsys):
        assert main(["lotka-solve", "--backend", "psychic",
                     "--out", str(tmp_path)]) == 3

    def test_bad_config_file_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{broken")
        assert main(["lotka-solve", "--config", str(cfg),
                     "--out", str(tmp_path)]) == 3

    def test_worst_outcome_wins(self, tmp_path, capsys):
        code = main(["lotka-solve", "ghost", "--out", str(tmp_path)])
        assert code == 3
        assert (tmp_path / "lotka-solve" / "summary.json").exists()

    def test_parallel_runs_both(self, tmp_path, capsys):
        code = main(["lotka-solve", "sde-demo", "--parallel",
                     "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "lotka-solve" / "trajectory.csv").exists()
        assert (tmp_path / "sde-demo" / "paths.csv").exists()

    def test_unreachable_server_exits_3(self, tmp_path, capsys):
        code = main(["lotka-solve", "--server", "http://127.0.0.1:1",
                     "--out", str(tmp_path)])
        assert code == 3


class TestEntryPoint:
    def test_console_script_is_wired(self):
        proc = subprocess.run([sys.executable, "-m", "neurodiff.cli", "list"],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0
        assert "rober" in proc.stdout
