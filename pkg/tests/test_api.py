"""HTTP surface: request validation, happy paths against known instances,
and the domain-error to status-code mapping."""
import numpy as np
import pytest
from fastapi.testclient import TestClient

from resobs import __version__
from resobs.api import create_app
from resobs.errors import InfeasiblePriorError, SolverFailureError

from conftest import simulate_measurements, slow_scalar_system


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def system_payload(sys_d):
    return {
        "A": sys_d.A.tolist(),
        "B": sys_d.B.tolist(),
        "C": sys_d.C.tolist(),
        "D": sys_d.D.tolist(),
        "dt": sys_d.dt,
    }


def test_health_reports_version(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


# ---------------------------------------------------------------------------
# /decode


def test_decode_recovers_planted_attack(client):
    rng = np.random.default_rng(101)
    sys_d, _ = slow_scalar_system(rng)
    x0 = rng.normal(size=1)
    attack = np.zeros((8, 2))
    attack[1, 0] = 0.7
    attack[5, 1] = -0.4
    y, _ = simulate_measurements(sys_d, x0, 8, attack=attack)

    r = client.post("/decode", json={"system": system_payload(sys_d), "y_window": y.tolist()})
    assert r.status_code == 200
    body = r.json()
    assert abs(body["x_hat"][0] - x0[0]) < 1e-5
    assert body["support"] == [2, 11]
    assert abs(body["e_hat"][1][0] - 0.7) < 1e-5
    assert abs(body["e_hat"][5][1] + 0.4) < 1e-5
    assert body["converged"] is True
    assert body["objective"] == pytest.approx(1.1, abs=1e-4)


def test_decode_rejects_inconsistent_shapes(client):
    rng = np.random.default_rng(2)
    sys_d, _ = slow_scalar_system(rng)
    payload = system_payload(sys_d)
    payload["C"] = [[1.0, 0.0], [0.0, 1.0]]  # two columns against a 1-state A
    r = client.post("/decode", json={"system": payload, "y_window": [[0.0, 0.0]] * 4})
    assert r.status_code == 400
    assert r.json()["error"] == "InvalidModelError"


def test_decode_missing_field_is_422(client):
    r = client.post("/decode", json={"y_window": [[0.0]]})
    assert r.status_code == 422
    locs = [tuple(item["loc"]) for item in r.json()["detail"]]
    assert ("body", "system") in locs


def test_decode_rejects_unknown_fields(client):
    rng = np.random.default_rng(3)
    sys_d, _ = slow_scalar_system(rng)
    r = client.post(
        "/decode",
        json={"system": system_payload(sys_d), "y_window": [[0.0, 0.0]] * 4, "mode": "fast"},
    )
    assert r.status_code == 422


# ---------------------------------------------------------------------------
# /rip


def test_rip_identity_certifies_zero(client):
    r = client.post("/rip", json={"matrix": np.eye(6).tolist(), "sparsity": 2})
    assert r.status_code == 200
    body = r.json()
    assert body["delta"] < 1e-12
    assert body["certified"] is True
    assert body["supports_checked"] == 15
    assert body["threshold"] == pytest.approx(1.0 / np.sqrt(2.0))


def test_rip_duplicate_column_not_certified(client):
    M = np.eye(5)[:, [0, 0, 1, 2]]
    r = client.post("/rip", json={"matrix": M.tolist(), "sparsity": 2})
    assert r.status_code == 200
    body = r.json()
    assert body["delta"] == pytest.approx(1.0)
    assert body["certified"] is False


def test_rip_budget_exhaustion_is_502(client):
    r = client.post("/rip", json={"matrix": np.eye(8).tolist(), "sparsity": 3, "max_supports": 5})
    assert r.status_code == 502
    assert r.json()["error"] == "OracleTooLargeError"


# ---------------------------------------------------------------------------
# /simulate


def test_simulate_clean_scenario(client):
    cfg = {"name": "api-clean", "dt": 0.02, "T": 10, "run_length": 36, "seed": 3}
    r = client.post("/simulate", json={"config": cfg})
    assert r.status_code == 200
    body = r.json()
    assert body["alarm_count"] == 0
    assert body["max_residue"] < 1e-6
    assert body["failures"] == {"luenberger": 0, "l1": 0, "multimodel": 0}
    assert body["trace_csv"] is None and body["metrics_csv"] is None
    metrics = body["metrics"]
    assert set(metrics["observers"]) == {"luenberger", "l1", "multimodel"}
    assert metrics["window"] == [0, 36]
    for name in metrics["observers"]:
        assert len(metrics["rms"][name]) == 5
        assert max(metrics["rms"][name]) < 1e-3
    assert body["manifest"]["case"] == "ieee14"


def test_simulate_can_inline_csv(client):
    cfg = {"dt": 0.02, "T": 10, "run_length": 30, "seed": 1, "observers": ["luenberger"]}
    r = client.post("/simulate", json={"config": cfg, "include_trace": True})
    assert r.status_code == 200
    body = r.json()
    assert body["trace_csv"].startswith("sample,delta1_true")
    assert len(body["trace_csv"].splitlines()) == 31
    assert body["metrics_csv"].startswith("observer,angle,rms,max_abs")


def test_simulate_validation_has_field_paths(client):
    r = client.post("/simulate", json={"config": {"run_length": 0}})
    assert r.status_code == 422
    locs = [tuple(item["loc"]) for item in r.json()["detail"]]
    assert ("body", "config", "run_length") in locs

    r = client.post("/simulate", json={"config": {"observers": ["l1", "kalman"]}})
    assert r.status_code == 422
    assert "unknown observers" in r.text


def test_simulate_domain_error_is_400(client):
    # passes schema validation, fails against the actual 10-state grid model
    cfg = {"dt": 0.02, "T": 5, "run_length": 30, "seed": 0, "observers": ["luenberger"]}
    r = client.post("/simulate", json={"config": cfg})
    assert r.status_code == 400
    assert r.json()["error"] == "ConfigurationError"
    assert "must be at least" in r.json()["detail"]


@pytest.mark.parametrize(
    "exc,status",
    [
        (InfeasiblePriorError("credibility region misses the reachable set"), 409),
        (SolverFailureError("iteration budget exhausted"), 502),
    ],
)
def test_simulate_maps_runtime_failures(client, monkeypatch, exc, status):
    def boom(cfg):
        raise exc

    monkeypatch.setattr("resobs.api._execute", boom)
    cfg = {"dt": 0.02, "T": 10, "run_length": 30, "seed": 0, "observers": ["luenberger"]}
    r = client.post("/simulate", json={"config": cfg})
    assert r.status_code == status
    assert r.json()["error"] == type(exc).__name__
    assert r.json()["detail"] == str(exc)
