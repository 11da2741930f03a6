from __future__ import annotations

import json
from pathlib import Path

import pytest

from synthblip.cli import EXIT_CONFIG, EXIT_DEFICIT, EXIT_OK, EXIT_VALIDATION, main


@pytest.fixture
def config_file(tmp_path):
    cfg = {
        "dgp": {
            "variant": "lti",
            "n_actions": 2,
            "horizon": 3,
            "dim": 1,
            "donors_per_set": 4,
            "n_targets": 2,
            "seed": 5,
        },
        "estimator": {"kind": "lti", "weights": "oracle"},
        "query": {"n_random": 3, "seed": 9},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_estimate_validate_oracle(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    assert (out / "panel.csv").exists()

    code = main(
        ["estimate", "--config", str(config_file), "--panel", str(out), "--out", str(out / "est")]
    )
    assert code == EXIT_OK
    assert "aggregates" in capsys.readouterr().out
    metrics = json.loads((out / "est" / "metrics.json").read_text())
    assert metrics["aggregates"]["max_abs_error"] <= 1e-8

    assert (
        main(["validate", "--panel", str(out / "panel.csv"), "--meta", str(out / "panel_meta.json")])
        == EXIT_OK
    )

    assert main(["oracle", "--config", str(config_file), "--out", str(out / "orc")]) == EXIT_OK
    assert (out / "orc" / "oracle.csv").exists()


def test_deterministic_outcome_bytes(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(config_file), "--out", str(a)])
    main(["simulate", "--config", str(config_file), "--out", str(b)])
    assert (a / "panel.csv").read_bytes() == (b / "panel.csv").read_bytes()


def test_seed_flag_overrides(config_file, tmp_path):
    cfg = json.loads(config_file.read_text())
    cfg["dgp"]["sigma_outcome"] = 1.0
    config_file.write_text(json.dumps(cfg))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(config_file), "--out", str(a)])
    main(["simulate", "--config", str(config_file), "--out", str(b), "--seed", "77"])
    assert (a / "panel.csv").read_bytes() != (b / "panel.csv").read_bytes()


def test_config_error_exit_code(tmp_path, config_file):
    missing = main(["estimate", "--config", str(tmp_path / "nope.json")])
    assert missing == EXIT_CONFIG

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["estimate", "--config", str(bad)]) == EXIT_CONFIG

    cfg = json.loads(config_file.read_text())
    cfg["dgp"]["variant"] = "ltv"  # clash with lti estimator
    clash = tmp_path / "clash.json"
    clash.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(clash)]) == EXIT_CONFIG


def test_estimator_override_flag(config_file, tmp_path):
    # override to SI: exact-sequence donors exist for the all-control query only
    cfg = json.loads(config_file.read_text())
    cfg["query"] = {"sequences": [[0, 0, 0]]}
    path = tmp_path / "si.json"
    path.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(path), "--estimator", "si"]) == EXIT_OK


def test_deficit_exit_code(config_file, tmp_path):
    cfg = json.loads(config_file.read_text())
    cfg["estimator"] = {"kind": "si", "weights": "oracle"}
    cfg["query"] = {"sequences": [[1, 1, 1]]}
    path = tmp_path / "deficit.json"
    path.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(path)]) == EXIT_DEFICIT


def test_validation_exit_code(config_file, tmp_path):
    out = tmp_path / "out"
    main(["simulate", "--config", str(config_file), "--out", str(out)])
    meta_path = out / "panel_meta.json"
    meta = json.loads(meta_path.read_text())
    meta["exogenous_until"][0] = 99
    meta_path.write_text(json.dumps(meta))
    code = main(["validate", "--panel", str(out / "panel.csv"), "--meta", str(meta_path)])
    assert code == EXIT_VALIDATION


def test_sweep_subcommand(config_file, tmp_path):
    cfg = json.loads(config_file.read_text())
    cfg["sweep"] = {"donors_per_set": [4], "sigma": [0.0], "replications": 1}
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "sweep_out"
    assert main(["sweep", "--config", str(path), "--out", str(out)]) == EXIT_OK
    assert (out / "sweep.csv").exists()


def test_max_enum_flag(config_file, tmp_path):
    code = main(
        ["oracle", "--config", str(config_file), "--out", str(tmp_path / "o"), "--max-enum", "2"]
    )
    assert code == EXIT_CONFIG  # cap exceeded is a configuration-level refusal


def test_server_mode_round_trip(config_file, tmp_path, monkeypatch):
    """--server goes through the HTTP layer; fake the transport with the app."""
    from fastapi.testclient import TestClient

    from synthblip import cli
    from synthblip.service import app

    tc = TestClient(app, raise_server_exceptions=False)

    def fake_post(server, route, payload):
        resp = tc.post(route, json=payload)
        return resp.status_code, resp.json()

    monkeypatch.setattr(cli, "_post", fake_post)
    out = tmp_path / "srv"
    code = main(
        [
            "simulate",
            "--config",
            str(config_file),
            "--out",
            str(out),
            "--server",
            "http://fake",
        ]
    )
    assert code == EXIT_OK
    assert (out / "panel.csv").exists()

    cfg = json.loads(config_file.read_text())
    cfg["estimator"] = {"kind": "si", "weights": "oracle"}
    cfg["query"] = {"sequences": [[1, 1, 1]]}
    deficit_cfg = tmp_path / "d.json"
    deficit_cfg.write_text(json.dumps(cfg))
    code = main(["estimate", "--config", str(deficit_cfg), "--server", "http://fake"])
    assert code == EXIT_DEFICIT
