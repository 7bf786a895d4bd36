import copy
import json
from pathlib import Path

import pytest

from beamlab.cli import main
from beamlab.config import ExperimentConfig, validate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BASE = {
    "task": "forward",
    "metric": {"dim": 2, "domain": [[0.0, 1.0], [0.0, 1.0]], "kind": "flat"},
    "model": {"a": 1.0, "b_n": 0.2, "c": [0.1]},
    "grid": {"cells": 16, "T": 0.25},
    "signal": {"type": "zero"},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["violations"] == []


def test_validate_missing_metric(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    del cfg["metric"]
    assert main(["validate", str(_write(tmp_path, cfg))]) == 2
    rep = json.loads(capsys.readouterr().out)
    assert rep["violations"][0]["path"] == "/"
    assert "metric" in rep["violations"][0]["message"]


def test_validate_unknown_key_and_bad_task(tmp_path):
    cfg = dict(BASE, colour="blue", task="dance")
    rep = validate(cfg)
    paths = {v["path"] for v in rep["violations"]}
    assert "/" in paths and "/task" in paths


def test_validate_reports_inadmissible_speed(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["model"]["a"] = {"type": "affine", "value": -0.2, "gradient": [1.0, 0.0]}
    assert main(["validate", str(_write(tmp_path, cfg))]) == 2
    rep = json.loads(capsys.readouterr().out)
    assert rep["violations"][0]["clause"] == "admissibility"
    assert "compatibility" not in rep["checks"]


def test_validate_unreadable_file(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 2


def test_run_forward_zero(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(_write(tmp_path, BASE)), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["stages"]["forward"]["max_abs_u"] == 0.0
    assert rep["provenance"]["beamlab"] == "0.1.0"
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["grid"]["cfl"] == 0.5
    for f in rep["files"]:
        assert (out / f).exists()


def test_run_config_error_exit_code(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    del cfg["metric"]
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("ConfigInvalid:")


def test_run_numerical_failure_exit_code(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["grid"]["cfl"] = 1.0
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 3
    assert capsys.readouterr().err.startswith("CflViolation (stage forward):")


def test_run_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert "ConfigInvalid" in capsys.readouterr().err


def test_config_round_trip():
    cfg = ExperimentConfig.from_file(CONFIGS / "golden_full_pipeline.json")
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()
    assert cfg.stages() == ["forward", "beam-check", "transform-check", "recover-b2"]
