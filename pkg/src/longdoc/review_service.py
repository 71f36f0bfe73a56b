"""HTTP review service for benchmark flag triage.

REST surface consumed by the review UI:

    GET  /api/flags?status=pending|kept|modified|removed|all
    GET  /api/flags/{flag_id}        flag + item + page image URLs + evidence
    POST /api/flags/{flag_id}/decision
    GET  /api/export                 corrected benchmark JSONL
    GET  /api/stats                  {pending, kept, modified, removed}

Static UI assets are served at /. Decisions persist append-only through the
store; concurrent reviewers see consistent counts because writes serialize
through the store lock and reads hit the replayed snapshot.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse
from pydantic import BaseModel

from .flagging import Decision, FlaggingError, ReviewStore

DEFAULT_BIND = "127.0.0.1:8321"

_FALLBACK_PAGE = """<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>Review service</title></head>
<body><h1>Review service is running</h1>
<p>No UI bundle found. Build the frontend (see frontend/README.md) or use the
REST API directly: /api/flags, /api/stats, /api/export.</p></body></html>
"""


class DecisionBody(BaseModel):
    action: str
    reviewer: str
    new_question: str | None = None
    new_answer: str | None = None
    added_accepted_answers: list[str] = []


def _flag_summary(store: ReviewStore, flag_id: str) -> dict:
    flag = store.flags[flag_id]
    action = store.latest_action(flag_id)
    status_of = {"keep": "kept", "modify": "modified", "remove": "removed"}
    return {
        "flag_id": flag.flag_id,
        "item_id": flag.item_id,
        "issue_kind": flag.issue_kind,
        "rationale": flag.rationale,
        "status": "pending" if action is None else status_of[action],
    }


def create_app(store: ReviewStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="longdoc review service")
    # Absolute from the start: the serving process must not depend on cwd.
    static_root = Path(static_dir).resolve() if static_dir else None

    @app.get("/api/flags")
    def list_flags(status: str = "all") -> dict:
        flags = store.flags_with_status(status)
        return {
            "flags": [_flag_summary(store, f.flag_id) for f in flags],
            "stats": store.stats(),
        }

    @app.get("/api/flags/{flag_id}")
    def get_flag(flag_id: str) -> dict:
        if flag_id not in store.flags:
            raise HTTPException(status_code=404, detail=f"unknown flag {flag_id}")
        flag = store.flags[flag_id]
        item = store.items[flag.item_id]
        decisions = [d.to_record() for d in store.decisions if d.flag_id == flag_id]
        return {
            **_flag_summary(store, flag_id),
            "evidence": flag.evidence,
            "item": item.to_record(),
            "page_image_urls": item.page_images,
            "decisions": decisions,
        }

    @app.post("/api/flags/{flag_id}/decision")
    def post_decision(flag_id: str, body: DecisionBody) -> dict:
        if flag_id not in store.flags:
            raise HTTPException(status_code=404, detail=f"unknown flag {flag_id}")
        try:
            decision = Decision(
                flag_id=flag_id,
                action=body.action,
                reviewer=body.reviewer,
                new_question=body.new_question,
                new_answer=body.new_answer,
                added_accepted_answers=list(body.added_accepted_answers),
            )
            store.record_decision(decision)
        except FlaggingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"ok": True, "flag_id": flag_id, "stats": store.stats()}

    @app.get("/api/export")
    def export() -> PlainTextResponse:
        return PlainTextResponse(store.export_jsonl(), media_type="application/jsonl")

    @app.get("/api/stats")
    def stats() -> dict:
        return store.stats()

    @app.get("/", response_class=HTMLResponse)
    def index():
        if static_root is not None:
            index_file = static_root / "index.html"
            if index_file.exists():
                return HTMLResponse(index_file.read_text(encoding="utf-8"))
        return HTMLResponse(_FALLBACK_PAGE)

    @app.get("/assets/{filename}")
    def asset(filename: str):
        if static_root is None:
            raise HTTPException(status_code=404, detail="no static assets configured")
        asset_dir = (static_root / "assets").resolve()
        target = (asset_dir / filename).resolve()
        if not str(target).startswith(str(asset_dir)) or not target.exists():
            raise HTTPException(status_code=404, detail=f"no asset {filename}")
        return FileResponse(target)

    return app


def serve_review(store_path: str | Path, bind_addr: str | None = None,
                 static_dir: str | Path | None = None) -> None:
    """Run the review service until interrupted. Refuses to start on a
    corrupt store — that error surfaces before binding."""
    import uvicorn

    store = ReviewStore(store_path)
    bind = bind_addr or os.getenv("REVIEW_BIND_ADDR", DEFAULT_BIND)
    host, _, port = bind.partition(":")
    app = create_app(store, static_dir=static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8321), log_level="warning")
