"""HTTP surface over the review service.

Endpoints mirror the service operations one to one; all error conditions
arrive as JSON bodies with a stable ``error`` field naming the condition.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import (
    AlreadyVerdicted,
    CacError,
    NotAssigned,
    QueueEmpty,
    SampleTooLarge,
    SliceOutOfRange,
    UnreadableSource,
)
from .review import ReviewService
from .store import ScoreStore

_STATUS = {
    QueueEmpty: 404,
    SliceOutOfRange: 404,
    UnreadableSource: 404,
    NotAssigned: 403,
    AlreadyVerdicted: 409,
    SampleTooLarge: 400,
}


class QueueRequest(BaseModel):
    n: int
    seed: int
    bins: list[str] | None = None
    score_range: tuple[int, int] | None = None


class VerdictRequest(BaseModel):
    item_id: str
    reviewer_id: str
    verdict: str


def create_app(store_root: str | Path) -> FastAPI:
    store = ScoreStore(store_root)
    service = ReviewService(store)

    app = FastAPI(title="cackit review service")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(CacError)
    def _cac_error(request, exc: CacError):
        status = _STATUS.get(type(exc), 500)
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    @app.exception_handler(ValueError)
    def _value_error(request, exc: ValueError):
        return JSONResponse(status_code=422,
                            content={"error": "ValueError",
                                     "detail": str(exc)})

    @app.post("/api/queue")
    def make_queue(body: QueueRequest) -> dict:
        queue_id = service.create_queue(
            n=body.n, seed=body.seed, bins=body.bins,
            score_range=body.score_range)
        return {"queue_id": queue_id}

    @app.get("/api/queue/{queue_id}/next")
    def next_item(queue_id: str, reviewer: str) -> dict:
        return service.next_item(queue_id, reviewer).to_record()

    @app.get("/api/slice/{study_uid}/{index}")
    def slice_png(study_uid: str, index: int, wc: float = 90.0,
                  ww: float = 750.0, overlay: bool = False) -> Response:
        png = service.render(study_uid, index, window=(wc, ww),
                             overlay=overlay)
        return Response(content=png, media_type="image/png")

    @app.post("/api/verdict")
    def post_verdict(body: VerdictRequest) -> dict:
        return service.post_verdict(body.item_id, body.reviewer_id,
                                    body.verdict)

    @app.get("/api/summary/{queue_id}")
    def summary(queue_id: str) -> dict:
        return service.review_summary(queue_id).to_record()

    return app
