import dataclasses
import json
import shutil
import threading
import time

import pytest
from fastapi.testclient import TestClient

from ttptagger import classifier
from ttptagger.service import create_app


@pytest.fixture()
def service(tmp_path, cli_workspace):
    model_path = tmp_path / "model.bundle.json"
    store_path = tmp_path / "store.jsonl"
    shutil.copy(cli_workspace["model"], model_path)
    shutil.copy(cli_workspace["store"], store_path)
    app = create_app(model_path, store_path)
    with TestClient(app) as client:
        yield client, app.state.engine


@pytest.fixture()
def sample_text(small_entries):
    return small_entries[0].document.text


def test_predict_returns_schema_valid_body(service, sample_text):
    client, _ = service
    resp = client.post("/api/predict", json={"text": sample_text})
    assert resp.status_code == 200
    body = resp.json()
    assert set(body) == {"doc_id", "tactics", "techniques", "model_version"}
    for row in body["tactics"] + body["techniques"]:
        assert set(row) == {"label_id", "name", "confidence", "decided"}
        assert 0.0 <= row["confidence"] <= 1.0


def test_predict_empty_text_is_400(service):
    client, _ = service
    assert client.post("/api/predict", json={"text": "   "}).status_code == 400
    assert client.post("/api/predict", json={}).status_code == 400


def test_invalid_json_is_400(service):
    client, _ = service
    resp = client.post(
        "/api/predict", content=b"{not json", headers={"content-type": "application/json"}
    )
    assert resp.status_code == 400


def test_feedback_durable_before_201(service, sample_text):
    client, engine = service
    before = engine.store_path.read_text()
    resp = client.post(
        "/api/feedback",
        json={"text": sample_text, "tactics": ["TA0001"], "techniques": ["T0001"]},
    )
    assert resp.status_code == 201
    doc_id = resp.json()["doc_id"]
    after = engine.store_path.read_text()
    assert doc_id not in before and doc_id in after
    stored = json.loads(after.splitlines()[-1])
    assert stored["tactics"] == ["TA0001"]
    assert stored["techniques"] == ["T0001"]


def test_feedback_unknown_label_is_422(service, sample_text):
    client, engine = service
    before = engine.store_path.read_text()
    resp = client.post("/api/feedback", json={"text": sample_text, "techniques": ["T9999"]})
    assert resp.status_code == 422
    assert engine.store_path.read_text() == before


def test_taxonomy_endpoint(service, small_taxonomy):
    client, _ = service
    body = client.get("/api/taxonomy").json()
    assert len(body["tactics"]) == len(small_taxonomy.tactics)
    assert len(body["techniques"]) == len(small_taxonomy.techniques)
    assert all("stix_id" in t for t in body["tactics"])


def test_model_metadata(service):
    client, _ = service
    body = client.get("/api/model").json()
    assert body["postprocessing"]["strategy"] == "hanging-node"
    assert body["trained_at"]
    assert body["cv_scores"]["tactics"]["macro_f05"] >= 0.0
    assert body["retrain_running"] is False


def test_export_roundtrip(service, sample_text):
    client, _ = service
    doc_id = client.post("/api/predict", json={"text": sample_text}).json()["doc_id"]
    resp = client.get("/api/export", params={"doc_id": doc_id})
    assert resp.status_code == 200
    bundle = resp.json()
    assert bundle["type"] == "bundle"
    assert bundle["objects"][0]["description"] == sample_text
    assert client.get("/api/export", params={"doc_id": "nope"}).status_code == 404


def test_retrain_single_flight_and_swap(service, sample_text):
    client, engine = service
    release = threading.Event()
    old_version = engine.bundle.trained_at

    def slow_train():
        release.wait(timeout=10)
        return dataclasses.replace(engine.bundle, trained_at="2030-01-01T00:00:00Z")

    engine.train_fn = slow_train

    first = client.post("/api/retrain")
    assert first.status_code == 202
    second = client.post("/api/retrain")
    assert second.status_code == 409

    assert client.get("/api/model").json()["model_version"] == old_version
    release.set()
    for _ in range(100):
        if not engine.retrain_running():
            break
        time.sleep(0.02)
    body = client.get("/api/model").json()
    assert body["model_version"] == "2030-01-01T00:00:00Z"
    assert body["retrain_running"] is False
    # the swapped bundle was persisted atomically to the model path
    on_disk = classifier.load_bundle(engine.model_path)
    assert on_disk.trained_at == "2030-01-01T00:00:00Z"
    # a third retrain is allowed once the first finished
    engine.train_fn = lambda: engine.bundle
    assert client.post("/api/retrain").status_code == 202


def test_default_retrain_picks_up_feedback(service, sample_text, small_entries):
    client, engine = service
    # append feedback, then run the real retrain synchronously
    client.post(
        "/api/feedback",
        json={"text": small_entries[2].document.text,
              "tactics": ["TA0002"], "techniques": ["T0003"]},
    )
    new_bundle = engine.train_fn()
    assert sum(m.trained_on for m in new_bundle.tactic_models.values()) > 0
    assert new_bundle.trained_at >= engine.bundle.trained_at
