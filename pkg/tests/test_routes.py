import pytest
from fastapi.testclient import TestClient

from main import app

PAYLOAD = {
    "maze_id": "open",
    "start_state": [1.5, 1.5, 0.0, 0.0],
    "goal_position": [5.5, 3.5],
    "engine": "i2sb",
    "prior": "straight_line",
    "nfe": 2,
    "seed": 0,
}


@pytest.fixture
def client():
    return TestClient(app)


def test_root_and_health(client, clean_service):
    assert client.get("/health").json() == {"status": "healthy"}
    body = client.get("/").json()
    assert body["status"] == "running"
    assert body["models"] == 0


def test_list_and_describe_mazes(client):
    assert client.get("/mazes").json() == ["large", "medium", "open", "umaze"]
    info = client.get("/mazes/umaze").json()
    assert info["rows"] == 5 and info["cols"] == 5
    assert info["free_cells"] == 7
    assert info["default_horizon"] == 256
    assert client.get("/mazes/spiral").status_code == 404


def test_plan_before_initialization(client, clean_service):
    assert client.post("/plan", json=PAYLOAD).status_code == 503


def test_plan_validation(client, clean_service, i2sb_model):
    clean_service.register(i2sb_model)
    wall = dict(PAYLOAD, start_state=[0.5, 0.5, 0.0, 0.0])
    assert client.post("/plan", json=wall).status_code == 400
    assert client.post("/plan", json=dict(PAYLOAD, maze_id="spiral")).status_code == 404
    assert client.post("/plan", json=dict(PAYLOAD, prior="gaussian")).status_code == 404
    assert client.post("/plan", json=dict(PAYLOAD, goal_position=[1.0])).status_code == 422


def test_plan_returns_dump(client, clean_service, i2sb_model):
    clean_service.register(i2sb_model)
    response = client.post("/plan", json=PAYLOAD)
    assert response.status_code == 200
    dump = response.json()
    assert dump["engine"] == "i2sb" and dump["nfe"] == 2
    assert len(dump["rows"]) == 16
    assert dump["rows"][0][2:] == PAYLOAD["start_state"]
    assert dump["rows"][-1][2:] == [5.5, 3.5, 0.0, 0.0]


def test_plan_and_execute(client, clean_service, i2sb_model):
    clean_service.register(i2sb_model)
    response = client.post("/plan/execute", json=PAYLOAD)
    assert response.status_code == 200
    body = response.json()
    assert body["plan"]["maze_id"] == "open"
    assert body["result"]["steps"] == 600
    assert body["result"]["total_reward"] >= 0
