import json
import subprocess
import sys

import pytest

from dnlmm.cli import main


@pytest.fixture
def config_file(tmp_path):
    cfg = {
        "name": "cli",
        "network": {"kind": "ring", "node_count": 3},
        "signals": {"ground_truth": {"L": 2, "Q": 1, "seed": 0}, "profiles": {"seed": 1},
                    "noise": {"kind": "cg", "p": 0.01}},
        "algorithms": [{"label": "D-NLMM", "family": "d-nlmm", "params": {"mu": 0.5}}],
        "run": {"iterations": 150, "trials": 2, "seed": 3, "theory_samples": 5000},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_validate(config_file, capsys):
    assert main(["validate", "--config", str(config_file)]) == 0
    assert capsys.readouterr().out.startswith("ok:")


def test_validate_reports_problems(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "name": "x", "network": {"kind": "ring", "node_count": 3},
        "signals": {"ground_truth": {"L": 2}},
        "algorithms": [{"label": "a", "family": "dnlms", "params": {"mu": 3.0}}]}))
    assert main(["validate", "--config", str(path)]) == 1
    assert "problem" in capsys.readouterr().out


def test_run_with_overrides(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_file), "--trials", "3", "--seed", "9",
                 "--out", str(out), "--theory", "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["D-NLMM"]["trials"] == 3
    assert summary["config"]["run"]["seed"] == 9
    assert "theory" in summary["results"]["D-NLMM"]
    assert "D-NLMM" in capsys.readouterr().out


def test_theory_command(config_file, tmp_path, capsys):
    assert main(["theory", "--config", str(config_file), "--out", str(tmp_path / "t")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["D-NLMM"]["spectral_radius"] < 1
    assert (tmp_path / "t" / "theory.json").exists()


def test_preset_dump(tmp_path):
    path = tmp_path / "fig9.json"
    assert main(["preset", "--name", "fig9", "--dump-config", str(path)]) == 0
    assert json.loads(path.read_text())["name"] == "fig9"


def test_preset_run(tmp_path):
    out = tmp_path / "fig11"
    assert main(["preset", "--name", "fig11", "--trials", "2", "--iterations", "120",
                 "--out", str(out), "--quiet"]) == 0
    assert (out / "diag_D-SNLMM.csv").exists()


def test_error_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point(config_file):
    out = subprocess.run([sys.executable, "-m", "dnlmm", "validate", "--config", str(config_file)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("ok:")
