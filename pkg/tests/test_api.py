import pytest
from fastapi.testclient import TestClient

from api.main import app
from api.routes import experiments


@pytest.fixture
def client():
    experiments.runs.clear()
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_presets(client):
    names = [item["name"] for item in client.get("/api/presets").json()["data"]]
    assert names == ["flat", "convex2", "decreasing2", "three-scale"]


class TestProfile:
    def test_inline(self, client):
        response = client.post("/api/profile", json={"sigmas": [1.0], "lambdas": [1.0], "n_list": [2, 10]})
        assert response.status_code == 200
        body = response.json()
        assert body["effective"]["weights"] == [3]
        assert body["first_order"] == pytest.approx(1.0)
        assert body["table"][0]["m_N"] is not None

    def test_invalid(self, client):
        response = client.post("/api/profile", json={"sigmas": [1.0], "lambdas": [0.5]})
        assert response.status_code == 400

    def test_upload_toml(self, client):
        content = b'sigmas = [0.7071067811865476, 1.224744871391589]\nlambdas = [0.5, 1.0]\n'
        response = client.post("/api/profile/upload", files={"file": ("p.toml", content)})
        assert response.status_code == 200
        assert len(response.json()["table"]) == 4

    def test_upload_wrong_type(self, client):
        response = client.post("/api/profile/upload", files={"file": ("p.txt", b"x")})
        assert response.status_code == 400


class TestExperiments:
    def test_run_get_delete(self, client):
        response = client.post("/api/experiments/profile", json={"profile": "convex2", "n_list": [4, 6]})
        assert response.status_code == 200
        run = response.json()
        assert run["passed"] and run["exit_code"] == 0
        assert [row["n"] for row in run["table"]] == [4, 6]

        assert client.get(f"/api/runs/{run['run_id']}").json()["run_id"] == run["run_id"]
        assert client.delete(f"/api/runs/{run['run_id']}").status_code == 200
        assert client.get(f"/api/runs/{run['run_id']}").status_code == 404

    def test_unknown_command(self, client):
        assert client.post("/api/experiments/explode", json={}).status_code == 404

    def test_forbidden_keys(self, client):
        response = client.post("/api/experiments/sample", json={"seed": 1, "output": "/tmp/x.npz"})
        assert response.status_code == 400

    def test_seed_required(self, client):
        assert client.post("/api/experiments/tails", json={"n_list": [3]}).status_code == 400

    def test_stochastic_run(self, client):
        response = client.post("/api/experiments/sample",
                               json={"seed": 2, "kind": "dgff", "n_list": [3]})
        assert response.status_code == 200
        assert response.json()["payload"]["field"]["kind"] == "dgff"

    def test_stats_count_runs(self, client):
        before = client.get("/api/stats").json()["total_runs"]
        client.post("/api/experiments/profile", json={})
        assert client.get("/api/stats").json()["total_runs"] == before + 1
