from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from synthblip.service import app

client = TestClient(app, raise_server_exceptions=False)


def base_config():
    return {
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


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_simulate_then_estimate_flow(tmp_path):
    out = str(tmp_path / "sim")
    resp = client.post("/simulate", json={"config": base_config(), "out_dir": out})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_units"] > 0
    assert Path(body["paths"]["panel"]).exists()

    resp = client.post(
        "/estimate",
        json={"config": base_config(), "panel_dir": out, "out_dir": str(tmp_path / "est")},
    )
    assert resp.status_code == 200
    agg = resp.json()["aggregates"]
    assert agg["n_failed"] == 0
    assert agg["max_abs_error"] <= 1e-8


def test_validate_endpoint(tmp_path):
    out = str(tmp_path / "sim")
    body = client.post("/simulate", json={"config": base_config(), "out_dir": out}).json()
    resp = client.post(
        "/validate", json={"panel_csv": body["paths"]["panel"], "meta_json": body["paths"]["meta"]}
    )
    assert resp.status_code == 200
    assert resp.json() == {"valid": True, "violations": []}

    meta = json.loads(Path(body["paths"]["meta"]).read_text())
    meta["exogenous_until"][0] = 99
    Path(body["paths"]["meta"]).write_text(json.dumps(meta))
    resp = client.post(
        "/validate", json={"panel_csv": body["paths"]["panel"], "meta_json": body["paths"]["meta"]}
    )
    assert resp.json()["valid"] is False


def test_deficit_maps_to_409():
    cfg = base_config()
    cfg["estimator"] = {"kind": "si", "weights": "oracle"}
    cfg["query"] = {"sequences": [[1, 1, 1]]}
    resp = client.post("/estimate", json={"config": cfg})
    assert resp.status_code == 409
    assert resp.json()["error"] == "donor_deficit"


def test_schema_violation_maps_to_422():
    cfg = base_config()
    cfg["dgp"]["variant"] = "ltv"  # clashes with the lti estimator
    resp = client.post("/estimate", json={"config": cfg})
    assert resp.status_code == 422

    resp = client.post("/simulate", json={"config": {"dgp": {}}, "out_dir": "x"})
    assert resp.status_code == 422


def test_semantic_error_maps_to_400(tmp_path):
    cfg = base_config()
    del cfg["estimator"]
    resp = client.post("/estimate", json={"config": cfg})
    assert resp.status_code == 400


def test_sweep_endpoint(tmp_path):
    cfg = base_config()
    cfg["sweep"] = {"donors_per_set": [4], "sigma": [0.0], "replications": 1}
    resp = client.post("/sweep", json={"config": cfg, "out_dir": str(tmp_path)})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_rows"] == 2  # two estimators, one cell, one rep
    assert Path(body["paths"]["csv"]).exists()


def test_oracle_endpoint(tmp_path):
    resp = client.post(
        "/oracle", json={"config": base_config(), "out_dir": str(tmp_path), "max_enum": 4096}
    )
    assert resp.status_code == 200
    assert resp.json()["n_entries"] > 0

    resp = client.post(
        "/oracle", json={"config": base_config(), "out_dir": str(tmp_path), "max_enum": 2}
    )
    assert resp.status_code == 400
