import pytest

from codedsched import create_app, routes
from codedsched.dueling import DuelingNet, save_net
from codedsched.env import make_rng


@pytest.fixture
def client():
    app = create_app()
    app.config["TESTING"] = True
    routes._POLICY_CACHE.clear()
    return app.test_client()


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.get_json() == {"ok": True}


def test_actions_table(client):
    resp = client.get("/api/actions?num_nodes=3")
    assert resp.status_code == 200
    body = resp.get_json()
    assert len(body["actions"]) == 13
    assert body["actions"][0] == {"index": 0, "n": 0, "k": 0, "subset": ""}


def test_actions_rejects_bad_count(client):
    assert client.get("/api/actions?num_nodes=0").status_code == 400
    assert client.get("/api/actions?num_nodes=abc").status_code == 400


def test_evaluate_baseline(client):
    resp = client.post("/api/evaluate", json={"policy": "greedy", "seed": 3, "slots": 400, "warmup": 40,
                                              "config": {"arrival_prob": 0.5}})
    assert resp.status_code == 200
    body = resp.get_json()
    assert body["policy"] == "greedy"
    assert body["slots_run"] == 360
    assert body["arrivals"] == body["completions"] + body["drops"] + body["resident_at_end"]


@pytest.mark.parametrize("payload", [
    {},
    {"policy": "best"},
    {"policy": "greedy", "config": {"bogus": 1}},
    {"policy": "greedy", "config": "fast"},
    {"policy": "greedy", "slots": "many"},
    {"policy": "greedy", "slots": 10, "warmup": 10},
    {"policy": "dueling"},
])
def test_evaluate_bad_requests(client, payload):
    resp = client.post("/api/evaluate", json=payload)
    assert resp.status_code == 400
    assert "error" in resp.get_json()


def test_evaluate_timeout(client, monkeypatch):
    monkeypatch.setattr(routes, "EVAL_ROUTE_TIMEOUT_SECS", 0.01)
    resp = client.post("/api/evaluate", json={"policy": "greedy", "slots": 5_000_000, "warmup": 0})
    assert resp.status_code == 504
    assert resp.get_json() == {"error": "timeout"}


def test_checkpoint_policies_are_cached(client, tmp_path, monkeypatch):
    monkeypatch.setattr(routes, "POLICY_CACHE_MAX", 1)
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    for path, seed in ((first, 0), (second, 1)):
        save_net(DuelingNet.init(7, 81, 8, make_rng(seed)), str(path))
    body = {"policy": "dueling", "slots": 50, "warmup": 0}
    assert client.post("/api/evaluate", json={**body, "checkpoint": str(first)}).status_code == 200
    assert client.post("/api/evaluate", json={**body, "checkpoint": str(first)}).status_code == 200
    assert len(routes._POLICY_CACHE) == 1
    assert client.post("/api/evaluate", json={**body, "checkpoint": str(second)}).status_code == 200
    assert len(routes._POLICY_CACHE) == 1
    assert next(iter(routes._POLICY_CACHE))[1].endswith("b.ckpt")


def test_oracle_ranking(client):
    resp = client.post("/api/oracle", json={"task_size": 100, "reps": 200, "available": [0, 2],
                                            "config": {"num_nodes": 3, "disconnect_probs": 0.2,
                                                       "straggle_rates": 1.0, "per_point_seconds": 0.005}})
    assert resp.status_code == 200
    rows = resp.get_json()
    assert len(rows) == 4
    assert all(set(r["subset"]) <= {0, 2} for r in rows)
    means = [r["mean_seconds"] for r in rows]
    assert means == sorted(means)


@pytest.mark.parametrize("payload", [
    {},
    {"task_size": 100, "reps": 10},
    {"task_size": 0},
    {"task_size": 100, "available": [7]},
])
def test_oracle_bad_requests(client, payload):
    assert client.post("/api/oracle", json=payload).status_code == 400


def test_cached_policy_follows_request_config(client, tmp_path):
    path = tmp_path / "net.ckpt"
    save_net(DuelingNet.init(7, 81, 8, make_rng(0)), str(path))
    body = {"policy": "dueling", "checkpoint": str(path), "slots": 50, "warmup": 0}
    assert client.post("/api/evaluate", json=body).status_code == 200
    assert client.post("/api/evaluate", json={**body, "config": {"queue_capacity": 20}}).status_code == 200
    assert len(routes._POLICY_CACHE) == 2
    capacities = sorted(p.config.queue_capacity for p in routes._POLICY_CACHE.values())
    assert capacities == [10, 20]
