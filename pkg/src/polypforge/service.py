"""HTTP front door for blinded review sessions.

Responses sent before a session completes never include ground truth or
tile lineage; the report endpoint refuses with 403 until every item is
labelled.
"""

from __future__ import annotations

import io
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, ConfigDict

from .errors import (
    ConfigError,
    DuplicateLabelError,
    IncompleteSessionError,
    ManifestError,
    MissingArtifactError,
    SessionOrderError,
    UnknownItemError,
    UnknownSessionError,
)
from .manifest import load_manifest, load_tiles
from .turing import (
    SessionStore,
    item_public_json,
    next_item,
    session_public_json,
    session_report,
)


class CreateSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    real_manifest: str | None = None
    synthetic_manifest: str | None = None
    n_each: int = 20
    seed: int = 0
    session_id: str | None = None


class LabelRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    item_id: str
    label: str
    latency_ms: float | None = None


def _load_pool(manifest_path: str):
    path = Path(manifest_path)
    if not path.exists():
        raise MissingArtifactError(f"manifest not found: {path}")
    return load_tiles(load_manifest(path, check_files=True))


def create_app(store: SessionStore | None = None, real_tiles=None,
               synthetic_tiles=None, ui_dir=None) -> FastAPI:
    """Build the review service.

    ``real_tiles`` and ``synthetic_tiles`` are fallback pools used when a
    session request does not name manifests; tests and demos preload them.
    """
    store = store if store is not None else SessionStore()
    app = FastAPI(title="polypforge review service")
    app.state.store = store
    app.state.default_real = real_tiles
    app.state.default_synthetic = synthetic_tiles
    app.state.items = {}

    def _register_items(session):
        for item in session.items:
            if item.tile is not None:
                app.state.items[item.item_id] = item.tile

    status_map = [
        (UnknownSessionError, 404),
        (UnknownItemError, 404),
        (MissingArtifactError, 404),
        (DuplicateLabelError, 409),
        (SessionOrderError, 409),
        (IncompleteSessionError, 403),
        (ManifestError, 400),
        (ConfigError, 422),
        (ValueError, 422),
    ]

    for exc_type, status in status_map:
        def handler(request: Request, exc, status=status):
            return JSONResponse(status_code=status, content={"detail": str(exc)})
        app.add_exception_handler(exc_type, handler)

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        if body.real_manifest is not None:
            real = _load_pool(body.real_manifest)
        elif app.state.default_real is not None:
            real = app.state.default_real
        else:
            raise ConfigError("real_manifest", "no manifest given and no default pool")
        if body.synthetic_manifest is not None:
            synthetic = _load_pool(body.synthetic_manifest)
        elif app.state.default_synthetic is not None:
            synthetic = app.state.default_synthetic
        else:
            raise ConfigError("synthetic_manifest", "no manifest given and no default pool")
        session = store.create(real, synthetic, body.n_each, body.seed, body.session_id)
        _register_items(session)
        return session_public_json(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_public_json(store.get(session_id))

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str):
        session = store.get(session_id)
        item = next_item(session)
        if item is None:
            return {"session_id": session_id, "complete": True,
                    "position": session.position, "total": session.total}
        payload = item_public_json(session, item)
        payload["session_id"] = session_id
        payload["complete"] = False
        return payload

    @app.post("/sessions/{session_id}/labels", status_code=201)
    def post_label(session_id: str, body: LabelRequest):
        store.record(session_id, body.item_id, body.label, body.latency_ms)
        return session_public_json(store.get(session_id))

    @app.get("/sessions/{session_id}/report")
    def get_report(session_id: str, format: str = "json"):
        report = session_report(store.get(session_id))
        if format == "csv":
            return Response(content=report.to_csv_bytes(), media_type="text/csv")
        if format != "json":
            raise ConfigError("format", f"must be 'json' or 'csv', got {format!r}")
        return report.to_json()

    @app.get("/items/{item_id}/image")
    def get_image(item_id: str):
        tile = app.state.items.get(item_id)
        if tile is None:
            raise UnknownItemError(f"no image available for item {item_id!r}")
        buf = io.BytesIO()
        Image.fromarray(tile.pixels).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def run_service(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
