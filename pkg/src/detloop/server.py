"""HTTP review service over a loop workspace.

Reads share the state freely; every mutation goes through one serialized
queue and re-reads the state file under an exclusive advisory lock, so the
service and the CLI can operate on the same workspace. Review submissions are
idempotent per request id, and only finalize transitions the loop state.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Any, Callable

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from filelock import FileLock
from pydantic import BaseModel, Field

from .loop import (
    LOCK_FILENAME,
    STATE_FILENAME,
    LoopState,
    PendingReviewsError,
    ReviewDecision,
    ReviewSubmission,
    finalize_pending,
    load_state,
    save_state,
    store_reviews,
)
from .streams import BBox, ValidationError, detection_to_json

__all__ = ["create_app"]


class DecisionBody(BaseModel):
    detection_index: int = Field(ge=0)
    action: str
    class_: str | None = Field(default=None, alias="class")
    bbox: list[float] | None = None

    model_config = {"populate_by_name": True}


class ReviewBody(BaseModel):
    request_id: str = Field(min_length=1)
    decisions: list[DecisionBody]


class _StateStore:
    """Single mutation queue over the persisted loop state."""

    def __init__(self, workdir: Path):
        self._workdir = workdir
        self._path = workdir / STATE_FILENAME
        self._file_lock = FileLock(workdir / LOCK_FILENAME)
        self._mutex = threading.Lock()

    def read(self) -> LoopState:
        return load_state(self._path)

    def mutate(self, fn: Callable[[LoopState], LoopState]) -> LoopState:
        with self._mutex, self._file_lock:
            state = load_state(self._path)
            state = fn(state)
            save_state(state, self._path)
            return state


def _decision_from_body(body: DecisionBody) -> ReviewDecision:
    return ReviewDecision(
        detection_index=body.detection_index,
        action=body.action,
        class_id=body.class_,
        bbox=BBox(*body.bbox) if body.bbox is not None else None,
    )


def _state_summary(state: LoopState) -> dict[str, Any]:
    pending = state.pending
    return {
        "iteration": state.iteration,
        "phase": state.phase.value,
        "training_size": len(state.training),
        "unlabeled_size": len(state.unlabeled),
        "alpha_schedule": list(state.alpha_schedule),
        "history": [vars(row).copy() for row in state.history],
        "pending": None if pending is None else {
            "iteration": pending.iteration,
            "frames": list(pending.human_frames),
            "reviewed": sorted(pending.reviews),
        },
    }


def create_app(workdir: Path, ui_dir: Path | None = None) -> FastAPI:
    store = _StateStore(Path(workdir))
    app = FastAPI(title="detloop review service")

    @app.exception_handler(RequestValidationError)
    async def _on_bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        # Schema problems in review payloads are client errors, not 422s.
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(ValidationError)
    async def _on_invalid_data(request: Request, exc: ValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/api/state")
    def get_state() -> dict[str, Any]:
        return _state_summary(store.read())

    @app.get("/api/iterations/{iteration}/pending")
    def get_pending(iteration: int) -> dict[str, Any]:
        state = store.read()
        pending = state.pending
        if pending is None or pending.iteration != iteration:
            raise HTTPException(404, detail=f"no pending review for iteration {iteration}")
        return {
            "iteration": pending.iteration,
            "frames": list(pending.human_frames),
            "reviewed": sorted(pending.reviews),
        }

    @app.get("/api/frames/{frame_id}")
    def get_frame(frame_id: str) -> dict[str, Any]:
        state = store.read()
        pending = state.pending
        if pending is None or frame_id not in pending.payload:
            raise HTTPException(404, detail=f"frame {frame_id} is not staged for review")
        detections = [
            {"index": idx, **detection_to_json(det)}
            for idx, det in enumerate(pending.payload[frame_id])
        ]
        review = pending.reviews.get(frame_id)
        return {
            "frame_id": frame_id,
            "iteration": pending.iteration,
            "pending_review": frame_id in pending.human_frames,
            "detections": detections,
            "image": pending.images.get(frame_id),
            "reviewed": review is not None,
            "request_id": review.request_id if review else None,
        }

    @app.post("/api/frames/{frame_id}/review")
    def post_review(frame_id: str, body: ReviewBody) -> dict[str, Any]:
        def _apply(state: LoopState) -> LoopState:
            pending = state.pending
            if pending is None or frame_id not in pending.human_frames:
                raise HTTPException(404, detail=f"frame {frame_id} is not pending review")
            existing = pending.reviews.get(frame_id)
            if existing is not None and existing.request_id == body.request_id:
                return state  # idempotent retry
            submission = ReviewSubmission(
                request_id=body.request_id,
                decisions=tuple(_decision_from_body(d) for d in body.decisions),
            )
            # Same frame, new request id: last write wins for this frame only.
            return store_reviews(state, {frame_id: submission})

        state = store.mutate(_apply)
        return {
            "frame_id": frame_id,
            "request_id": body.request_id,
            "accepted": True,
            "remaining": state.pending.unreviewed() if state.pending else [],
        }

    @app.post("/api/iterations/{iteration}/finalize")
    def finalize(iteration: int) -> dict[str, Any]:
        def _apply(state: LoopState) -> LoopState:
            if state.iteration > iteration:
                return state  # already finalized; idempotent retry
            pending = state.pending
            if pending is None or pending.iteration != iteration:
                raise HTTPException(404, detail=f"no pending review for iteration {iteration}")
            try:
                return finalize_pending(state)
            except PendingReviewsError as exc:
                raise HTTPException(409, detail={"unreviewed": exc.missing}) from exc

        state = store.mutate(_apply)
        return {
            "iteration": iteration,
            "status": "finalized" if state.iteration > iteration else "pending",
            "training_size": len(state.training),
            "next_iteration": state.iteration,
            "phase": state.phase.value,
        }

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
