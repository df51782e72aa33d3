from __future__ import annotations

import json

import pytest

from curveflow.cli import EXIT_FAILED, EXIT_PASSED, EXIT_USAGE, main
from curveflow.config import preset_names
from curveflow.runs import MANIFEST_FILENAME, read_trajectory_csv
from curveflow.theorems import NotApplicableError


def _write_config(tmp_path, payload) -> str:
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def _stationary_config(kind: dict) -> dict:
    return {
        "name": "still",
        "flows": ["AP", "LP"],
        "curve": kind,
        "node_count": 128,
        "policy": {"t_max": 0.01},
        "dt": {"fixed_dt": 0.001},
        "sample_every": 5,
        "checks": ["stationary", "conservation"],
    }


def test_presets_command_lists_names(capsys):
    exit_code = main(["presets"])

    captured = capsys.readouterr()
    assert exit_code == EXIT_PASSED
    assert captured.out.splitlines() == preset_names()


def test_unknown_preset_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "--preset", "nope"])

    assert excinfo.value.code == EXIT_USAGE
    assert "invalid choice" in capsys.readouterr().err


def test_bad_config_exits_without_traceback(tmp_path, capsys):
    path = _write_config(tmp_path, {"name": "x", "checks": ["identities"], "node_count": 100})

    exit_code = main(["run", "--config", path, "--out-dir", str(tmp_path / "out")])

    captured = capsys.readouterr()
    assert exit_code == EXIT_USAGE
    assert captured.err.startswith("error: config: ")
    assert "node_count" in captured.err
    assert "Traceback" not in captured.err


def test_identity_run_writes_artifacts_and_report(tmp_path, capsys):
    path = _write_config(tmp_path, {"name": "ens", "checks": ["identities"], "ensemble_size": 2, "node_count": 256})
    output_dir = tmp_path / "out"

    exit_code = main(["run", "--config", path, "--out-dir", str(output_dir), "--seed", "3"])

    captured = capsys.readouterr()
    assert exit_code == EXIT_PASSED
    assert captured.out.startswith("ens: ")
    assert "[1] Running ens" in captured.err
    manifest = json.loads((output_dir / MANIFEST_FILENAME).read_text(encoding="utf-8"))
    assert manifest["run_mode"] == "both"
    assert manifest["all_passed"] is True
    run_dir = output_dir / "runs" / manifest["run_id"]
    for name in ("identities.json", "verdict.json", "config.json", "summary.txt"):
        assert (run_dir / name).exists()
        assert (output_dir / name).exists()
    assert json.loads((run_dir / "config.json").read_text(encoding="utf-8"))["seed"] == 3
    assert json.loads((run_dir / "identities.json").read_text(encoding="utf-8"))["count"] == 2

    exit_code = main(["report", str(run_dir)])

    captured = capsys.readouterr()
    assert exit_code == EXIT_PASSED
    assert captured.out.startswith("curveflow experiment ens")
    assert "PASS identity_" in captured.out


def test_stationary_circle_run_in_archive_mode(tmp_path, capsys):
    path = _write_config(tmp_path, _stationary_config({"kind": "circle", "rotation_number": 2, "centre": [0.5, -0.25]}))
    output_dir = tmp_path / "out"

    exit_code = main(["run", "--config", path, "--out-dir", str(output_dir), "--run-mode", "archive", "--quiet"])

    captured = capsys.readouterr()
    assert exit_code == EXIT_PASSED
    assert captured.err == ""
    manifest = json.loads((output_dir / MANIFEST_FILENAME).read_text(encoding="utf-8"))
    assert manifest["published_latest"] is False
    run_dir = output_dir / "runs" / manifest["run_id"]
    assert not (output_dir / "verdict.json").exists()
    verdict = json.loads((run_dir / "verdict.json").read_text(encoding="utf-8"))
    names = [check["name"] for check in verdict["checks"]]
    assert "AP-0:stationary_velocity" in names
    assert "LP-0:length_conserved" in names
    columns = read_trajectory_csv(run_dir / "trajectory-LP-0.csv")
    assert columns["t"][-1] == pytest.approx(0.01)
    termination = json.loads((run_dir / "termination-AP-0.json").read_text(encoding="utf-8"))
    assert termination["kind"] == "ReachedTmax"


def test_failed_checks_exit_with_one(tmp_path, capsys):
    path = _write_config(tmp_path, _stationary_config({"kind": "ellipse", "a": 2.0, "b": 1.0}))
    output_dir = tmp_path / "out"

    exit_code = main(["run", "--config", path, "--out-dir", str(output_dir), "--run-mode", "latest", "--quiet"])

    captured = capsys.readouterr()
    assert exit_code == EXIT_FAILED
    assert "failed: AP-0:stationary_velocity" in captured.err
    assert not (output_dir / "runs").exists()

    assert main(["report", str(output_dir)]) == EXIT_FAILED
    assert "FAIL AP-0:stationary_velocity" in capsys.readouterr().out


def test_report_on_missing_directory(tmp_path, capsys):
    exit_code = main(["report", str(tmp_path / "nowhere")])

    assert exit_code == EXIT_USAGE
    assert capsys.readouterr().err.startswith("error: runs: cannot read")


def test_runtime_errors_exit_with_one(monkeypatch, tmp_path, capsys):
    def broken(config, **kwargs):
        raise NotApplicableError("decay fit needs a run that reached t_max")

    monkeypatch.setattr("curveflow.cli.run_experiment", broken)

    exit_code = main(["run", "--preset", "stationary", "--out-dir", str(tmp_path)])

    assert exit_code == EXIT_FAILED
    assert "error: theorems: decay fit needs" in capsys.readouterr().err


def test_plot_command_writes_png(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    path = _write_config(tmp_path, _stationary_config({"kind": "ellipse", "a": 2.0, "b": 1.0}))
    output_dir = tmp_path / "out"
    main(["run", "--config", path, "--out-dir", str(output_dir), "--run-mode", "latest", "--quiet"])
    capsys.readouterr()

    exit_code = main(["plot", str(output_dir)])

    assert exit_code == EXIT_PASSED
    assert (output_dir / "trajectory-AP-0.png").exists()
    assert "Wrote plot:" in capsys.readouterr().out
