"""HTTP API over one frozen model and one review-queue file.

The model never changes for the server's lifetime; the queue is held in
memory behind a lock and persisted with an atomic file replace after every
mutation, so any request sequence leaves the file parseable and consistent.

Endpoints (JSON bodies, UTF-8):
  POST /api/tag                 tag raw text with the documented tokenizer
  GET  /api/review              item summaries, least confident first
  GET  /api/review/{id}         one full item
  POST /api/review/{id}         submit corrected tags
  POST /api/review/{id}/approve accept model tags without edits
  GET  /api/tagset              tags and their top-level categories
  GET  /api/stats               queue counters and model metadata

Errors are {"code", "message", "detail"?} with 400 malformed body, 404
unknown id, 409 status conflict, 422 validation failure, 500 internal.
"""

from __future__ import annotations

import os
import string
import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .augment import (
    ReviewQueue,
    apply_correction,
    approve_item,
    load_queue,
    save_queue,
)
from .errors import QueueError, TaglabError
from .tagger import TaggerModel, tag_sentence

DANDA = "।"  # ।
_DETACHABLE = set(string.punctuation) | {DANDA}

DEFAULT_PORT = 8713


def tokenize_text(text: str) -> list[str]:
    """The toolkit's raw-text tokenizer: split on whitespace, then detach
    terminal danda and ASCII punctuation into their own tokens (repeatedly,
    so "word)." yields ["word", ")", "."]). A token that is only punctuation
    stays whole. Deliberately minimal; corpora are normally pre-tokenized."""
    tokens: list[str] = []
    for field in text.split():
        tail: list[str] = []
        while len(field) > 1 and field[-1] in _DETACHABLE:
            tail.append(field[-1])
            field = field[:-1]
        tokens.append(field)
        tokens.extend(reversed(tail))
    return tokens


def default_port() -> int:
    value = os.environ.get("TAGLAB_PORT")
    if value:
        try:
            return int(value)
        except ValueError:
            pass
    return DEFAULT_PORT


class TagRequest(BaseModel):
    text: str


class CorrectionRequest(BaseModel):
    corrected_tags: list[str]


def _error_response(status: int, code: str, message: str, detail=None):
    body = {"code": code, "message": message}
    if detail is not None:
        body["detail"] = detail
    return JSONResponse(status_code=status, content=body)


def _item_summary(item) -> dict:
    return {
        "id": item.id,
        "status": item.status,
        "mean_confidence": item.mean_confidence(),
        "length": len(item.tokens),
        "preview": " ".join(item.tokens[:8]),
    }


def create_app(model: TaggerModel, queue_path: str,
               static_dir: str | None = None) -> FastAPI:
    """Build the service over a frozen model snapshot and a queue file.

    A missing queue file starts an empty queue; it is created on the first
    mutation. `static_dir`, when given, is served at / for the review UI.
    """
    app = FastAPI(title="taglab review service")
    lock = threading.Lock()
    queue: ReviewQueue = (
        load_queue(queue_path) if os.path.exists(queue_path) else ReviewQueue()
    )
    tagset = model.tagset

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return _error_response(400, "malformed_body", "malformed request body",
                               detail=str(exc.errors()[:2]))

    @app.exception_handler(TaglabError)
    async def domain_error(request: Request, exc: TaglabError):
        status = 422
        if isinstance(exc, QueueError) and exc.conflict:
            status = 409
        return _error_response(status, exc.code, exc.message, exc.detail)

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        return _error_response(500, "internal_error", str(exc))

    @app.post("/api/tag")
    def tag_text(body: TagRequest):
        tokens = tokenize_text(body.text)
        if not tokens:
            return _error_response(400, "empty_text",
                                   "no tokens in the submitted text")
        tagged = tag_sentence(model, tokens)
        return {
            "tokens": tokens,
            "tags": [tag for tag, _ in tagged],
            "confidences": [conf for _, conf in tagged],
        }

    @app.get("/api/review")
    def review_list(status: str = "pending", limit: int = 50):
        if status not in ("pending", "corrected", "approved", "all"):
            return _error_response(422, "bad_status",
                                   f"unknown status filter {status!r}")
        with lock:
            items = queue.by_confidence(None if status == "all" else status,
                                        limit=limit)
            return {"items": [_item_summary(i) for i in items]}

    @app.get("/api/review/{item_id}")
    def review_item(item_id: str):
        with lock:
            item = queue.get(item_id)
            if item is None:
                return _error_response(404, "unknown_item",
                                       f"unknown review item {item_id!r}")
            return item.to_json()

    @app.post("/api/review/{item_id}")
    def correct_item(item_id: str, body: CorrectionRequest):
        with lock:
            if queue.get(item_id) is None:
                return _error_response(404, "unknown_item",
                                       f"unknown review item {item_id!r}")
            item = apply_correction(queue, item_id, body.corrected_tags, tagset)
            save_queue(queue, queue_path)
            return item.to_json()

    @app.post("/api/review/{item_id}/approve")
    def approve(item_id: str):
        with lock:
            if queue.get(item_id) is None:
                return _error_response(404, "unknown_item",
                                       f"unknown review item {item_id!r}")
            item = approve_item(queue, item_id)
            save_queue(queue, queue_path)
            return item.to_json()

    @app.get("/api/tagset")
    def tagset_listing():
        return {
            "categories": list(tagset.categories),
            "tags": [
                {"tag": tag, "category": tagset.category_of[tag]}
                for tag in tagset.tags
            ],
        }

    @app.get("/api/stats")
    def stats():
        with lock:
            return {
                "queue": queue.counters(),
                "model": {
                    "architecture": model.architecture,
                    "tags": len(tagset),
                    "embedding_dim": model.stack.dim,
                    "hidden_dim": model.hidden_dim,
                    "providers": [p.kind for p in model.stack.providers],
                },
            }

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
