"""HTTP JSON service backing the review UI.

Endpoints under /api: predict, feedback, retrain, model, taxonomy, export.
The model bundle sits behind an atomic swap so every request is served by
exactly one bundle version; feedback appends are durable before the 201 is
returned; at most one retrain runs at a time (a second request gets 409).
"""

from __future__ import annotations

import logging
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, field_validator

from . import classifier, postprocess, stix_export
from .cli import CliError, prediction_payload, run_prediction
from .ingest import (
    Document,
    DuplicateDocumentError,
    LabeledDocument,
    LabelValidationError,
    TrainingStore,
    now_iso,
)

logger = logging.getLogger(__name__)


class PredictRequest(BaseModel):
    text: str
    title: str | None = None

    @field_validator("text")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("text must be non-empty")
        return value


class FeedbackRequest(BaseModel):
    text: str
    tactics: list[str] = []
    techniques: list[str] = []

    @field_validator("text")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("text must be non-empty")
        return value


class ServiceState:
    """Mutable service core: current bundle, store, retrain single-flight."""

    def __init__(self, model_path, store_path, train_fn=None):
        self.model_path = Path(model_path)
        self.store_path = Path(store_path)
        self._bundle = classifier.load_bundle(self.model_path)
        if self.store_path.exists():
            self.store = TrainingStore.load(self.store_path)
        else:
            self.store = TrainingStore.create(self.store_path)
        self._bundle_lock = threading.Lock()
        self._retrain_lock = threading.Lock()
        self._cache: dict[str, dict] = {}
        self.train_fn = train_fn or self._default_train
        self.last_retrain_error: str | None = None

    @property
    def bundle(self) -> classifier.ModelBundle:
        with self._bundle_lock:
            return self._bundle

    def swap_bundle(self, bundle: classifier.ModelBundle) -> None:
        classifier.save_bundle(bundle, self.model_path)   # atomic rename inside
        with self._bundle_lock:
            self._bundle = bundle

    def _default_train(self) -> classifier.ModelBundle:
        current = self.bundle
        ctx = postprocess.context_from_artifacts(current.taxonomy, current.artifacts, current.config)
        return classifier.train_bundle(
            self.store, current.taxonomy, current.config, stats=ctx.stats
        )

    def start_retrain(self) -> bool:
        """Kick off a background retrain; False when one is already running."""
        if not self._retrain_lock.acquire(blocking=False):
            return False

        def work():
            try:
                self.swap_bundle(self.train_fn())
                self.last_retrain_error = None
                logger.info("retrain finished; bundle swapped")
            except Exception as exc:   # surfaced via /api/model, never crashes the server
                self.last_retrain_error = str(exc)
                logger.exception("retrain failed")
            finally:
                self._retrain_lock.release()

        threading.Thread(target=work, name="retrain", daemon=True).start()
        return True

    def retrain_running(self) -> bool:
        if self._retrain_lock.acquire(blocking=False):
            self._retrain_lock.release()
            return False
        return True


def create_app(model_path, store_path, ui_dist=None, train_fn=None) -> FastAPI:
    state = ServiceState(model_path, store_path, train_fn=train_fn)
    app = FastAPI(title="ttptagger", version="0.1.0")
    app.state.engine = state

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": list(map(str, e.get("loc", ()))), "msg": str(e.get("msg", ""))}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.post("/api/predict")
    def api_predict(body: PredictRequest):
        bundle = state.bundle
        doc_id = "doc-" + uuid.uuid4().hex[:12]
        try:
            pred = run_prediction(bundle, body.text, doc_id)
        except CliError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        state._cache[doc_id] = {
            "text": body.text,
            "title": body.title or f"Report {doc_id}",
            "published": now_iso(),
            "pred": pred,
            "model_version": bundle.model_version(),
        }
        while len(state._cache) > 256:   # bound memory on long-lived services
            state._cache.pop(next(iter(state._cache)))
        return prediction_payload(bundle, pred)

    @app.post("/api/feedback", status_code=201)
    def api_feedback(body: FeedbackRequest):
        bundle = state.bundle
        entry = LabeledDocument(
            document=Document(
                doc_id="feedback-" + uuid.uuid4().hex[:12],
                source="feedback",
                text=body.text,
            ),
            tactic_labels=frozenset(body.tactics),
            technique_labels=frozenset(body.techniques),
            added_at=now_iso(),
        )
        try:
            state.store.append_feedback(entry, bundle.taxonomy)
        except LabelValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except DuplicateDocumentError as exc:
            raise HTTPException(status_code=409, detail=f"duplicate doc_id {exc}")
        return {"doc_id": entry.document.doc_id, "stored": len(state.store)}

    @app.post("/api/retrain", status_code=202)
    def api_retrain():
        if not state.start_retrain():
            raise HTTPException(status_code=409, detail="retrain already running")
        return {"status": "retraining"}

    @app.get("/api/model")
    def api_model():
        bundle = state.bundle
        return {
            "trained_at": bundle.trained_at,
            "model_version": bundle.model_version(),
            "taxonomy_version": bundle.taxonomy_version,
            "postprocessing": bundle.postprocessing,
            "cv_scores": bundle.cv_scores,
            "retrain_running": state.retrain_running(),
            "last_retrain_error": state.last_retrain_error,
        }

    @app.get("/api/taxonomy")
    def api_taxonomy():
        tax = state.bundle.taxonomy
        return {
            "version": tax.version,
            "tactics": [
                {"id": t.id, "name": t.name, "stix_id": t.stix_id} for t in tax.tactics
            ],
            "techniques": [
                {
                    "id": t.id,
                    "name": t.name,
                    "stix_id": t.stix_id,
                    "tactic_ids": sorted(t.tactic_ids),
                }
                for t in tax.techniques
            ],
        }

    @app.get("/api/export")
    def api_export(doc_id: str):
        cached = state._cache.get(doc_id)
        if cached is None:
            raise HTTPException(status_code=404, detail=f"no prediction cached for {doc_id}")
        bundle = state.bundle
        doc = Document(doc_id=doc_id, source="api", text=cached["text"])
        stix = stix_export.export(
            cached["pred"], doc, bundle.taxonomy, cached["title"], cached["published"]
        )
        return JSONResponse(content=stix)

    if ui_dist:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dist, html=True), name="ui")

    return app
