import json
import time

import pytest
from fastapi.testclient import TestClient

from needle.api import create_app, wire_score
from needle.genhub import Resolution, SceneSpec, mock_render
from needle.pixels import encode_png
from needle.service import NeedleService


@pytest.fixture
def service(tmp_path, monkeypatch):
    monkeypatch.setenv("NEEDLE_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("NEEDLE_MODE", "fast")
    svc = NeedleService()
    svc.start(reconcile_on_start=False)
    yield svc
    svc.stop()


@pytest.fixture
def client(service):
    app = create_app(service)
    with TestClient(app) as c:
        c.service = service
        yield c


def write_scene(path, seed, scene=None):
    scene = scene or SceneSpec("circle", "red", "white")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(mock_render(scene, seed, Resolution.SMALL)))


def wait_for_progress(client, directory_id, timeout=60):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/v1/directories/{directory_id}").json()
        if body["progress"] == 1.0:
            return body
        time.sleep(0.05)
    raise AssertionError("directory never finished indexing")


# --- health / version / status -----------------------------------------------

def test_health(client):
    resp = client.get("/v1/health")
    assert resp.status_code == 200
    assert resp.text == "ok"


def test_version_components(client):
    body = client.get("/v1/version").json()
    assert set(body) == {"cli", "backend", "ui"}
    for v in body.values():
        parts = v.split(".")
        assert len(parts) >= 3


def test_status_fresh_install(client):
    body = client.get("/v1/status").json()
    assert body["apiHealthy"] is True
    assert body["directories"] == []
    assert all(state == "up" for state in body["services"].values())
    assert any(g["name"] == "mock" for g in body["generators"])


def test_status_fault_injection(client):
    client.service.force_down("vecstore")
    body = client.get("/v1/status").json()
    assert body["services"]["vecstore"] == "down"


# --- directories ---------------------------------------------------------------

def test_directory_lifecycle(client, tmp_path):
    d = tmp_path / "imgs"
    for i in range(8):
        write_scene(d / f"{i}.png", seed=i)
    resp = client.post("/v1/directories", json={"path": str(d)})
    assert resp.status_code == 202
    entry = resp.json()
    assert entry["imageCount"] == 8

    body = wait_for_progress(client, entry["id"])
    assert body["progress"] == 1.0

    assert client.post("/v1/directories", json={"path": str(d)}).status_code == 409

    resp = client.patch(f"/v1/directories/{entry['id']}", json={"enabled": False})
    assert resp.json()["enabled"] is False

    assert client.delete(f"/v1/directories/{entry['id']}").status_code == 204
    assert client.get(f"/v1/directories/{entry['id']}").status_code == 404
    assert client.delete(f"/v1/directories/{entry['id']}").status_code == 404


def test_directory_bad_path(client):
    resp = client.post("/v1/directories", json={"path": "/definitely/not/here"})
    assert resp.status_code == 400
    assert "PathNotFound" in resp.json()["detail"]


# --- query ------------------------------------------------------------------------

def test_query_requires_prompt(client):
    assert client.post("/v1/query", json={"prompt": "", "n": 5}).status_code == 400


def test_query_empty_index_returns_empty_results(client):
    resp = client.post("/v1/query",
                       json={"prompt": "a red circle on a white background", "n": 5})
    assert resp.status_code == 200
    body = resp.json()
    assert body["results"] == []
    assert len(body["guides"]) >= 1


def test_query_end_to_end(client, tmp_path):
    d = tmp_path / "imgs"
    for i in range(6):
        write_scene(d / f"red{i}.png", seed=i)
    for i in range(6):
        write_scene(d / f"blue{i}.png", seed=100 + i,
                    scene=SceneSpec("square", "blue", "black"))
    entry = client.post("/v1/directories", json={"path": str(d)}).json()
    wait_for_progress(client, entry["id"])

    resp = client.post("/v1/query", json={
        "prompt": "a red circle on a white background",
        "n": 6,
        "overrides": {"m": 2, "seed": 5, "resolution": "SMALL"},
    })
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["results"]) == 6
    scores = [r["score"] for r in body["results"]]
    assert scores == sorted(scores, reverse=True)
    assert all(r["path"] and "red" in r["path"] for r in body["results"][:3])
    assert len(body["guides"]) == 2
    assert len(body["sources"]) == 4  # m=2 x l=2 (fast mode)
    assert set(body["timings"]) >= {"generateMs", "searchMs", "fuseMs", "totalMs"}

    # serialization round-trip at 9 significant digits
    for r in body["results"]:
        assert r["score"] == wire_score(r["score"])

    # guide images are served by id
    guide_url = body["guides"][0]["url"]
    img = client.get(guide_url)
    assert img.status_code == 200
    assert img.headers["content-type"] == "image/png"

    # result files are served by numeric id
    file_resp = client.get(body["results"][0]["url"])
    assert file_resp.status_code == 200
    assert file_resp.headers["content-type"] == "image/png"


def test_query_all_engines_disabled_is_503(client):
    rev = client.get("/v1/generators").json()["revision"]
    resp = client.patch("/v1/generators", json={
        "revision": rev,
        "perEngine": {"mock": {"enabled": False}, "local-http": {"enabled": False}},
    })
    assert resp.status_code == 200
    resp = client.post("/v1/query", json={"prompt": "anything", "n": 3})
    assert resp.status_code == 503
    assert resp.json()["detail"]["error"] == "NoEnabledEngines"


def test_query_forced_engine_failure_lists_causes(client, service):
    for engine in service.hub.engines():
        if engine.kind == "mock":
            engine.params["fail"] = True
    resp = client.post("/v1/query", json={"prompt": "anything", "n": 3})
    assert resp.status_code == 503
    detail = resp.json()["detail"]
    assert detail["error"] == "AllEnginesFailed"
    assert "mock" in detail["causes"]


def test_images_404(client):
    assert client.get("/v1/images/999999").status_code == 404
    assert client.get("/v1/images/gdoesnotexist").status_code == 404
    assert client.get("/v1/images/bogus").status_code == 404


# --- generators -----------------------------------------------------------------------

def test_generator_reorder_and_conflict(client):
    body = client.get("/v1/generators").json()
    names = [g["name"] for g in body["generators"]]
    assert names == ["mock", "local-http"]
    rev = body["revision"]

    resp = client.patch("/v1/generators",
                        json={"revision": rev, "orderedNames": ["local-http", "mock"]})
    assert resp.status_code == 200
    after = client.get("/v1/generators").json()
    assert [g["name"] for g in after["generators"]] == ["local-http", "mock"]
    assert after["generators"][0]["priority"] == 0

    # second writer with the stale token conflicts
    resp = client.patch("/v1/generators",
                        json={"revision": rev, "orderedNames": ["mock", "local-http"]})
    assert resp.status_code == 409


def test_generator_unknown_name_400(client):
    rev = client.get("/v1/generators").json()["revision"]
    resp = client.patch("/v1/generators",
                        json={"revision": rev, "orderedNames": ["nope"]})
    assert resp.status_code == 400
    assert [g["name"] for g in client.get("/v1/generators").json()["generators"]] \
        == ["mock", "local-http"]


def test_generator_config_persisted(client, service):
    rev = client.get("/v1/generators").json()["revision"]
    client.patch("/v1/generators",
                 json={"revision": rev, "orderedNames": ["local-http", "mock"]})
    persisted = json.loads((service.data_dir / "generators.json").read_text())
    assert persisted[0]["name"] == "local-http"
