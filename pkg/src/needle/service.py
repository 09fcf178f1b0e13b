"""HTTP service: indexing jobs, search sessions with an optional guide-review
gate, feedback ingestion, and weight inspection.

Sessions are held in a bounded in-memory LRU and move through
generating -> (awaiting_review) -> searching -> done/failed. Search and index
work runs on daemon threads; clients poll the session or job resource.
Feedback is accepted once per finished session and is the only operation that
mutates trust weights.
"""
from __future__ import annotations

import base64
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import cv2
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel, Field

from .engine import IndexProgress, RetrievalEngine, SearchOutcome
from .errors import ConfigError, NeedleError, ValidationError
from .generation import GuideTuple, QuerySpec
from .wire import encode_png

GENERATING = "generating"
AWAITING_REVIEW = "awaiting_review"
SEARCHING = "searching"
DONE = "done"
FAILED = "failed"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class SearchSession:
    query_id: str
    spec: QuerySpec
    state: str = GENERATING
    prompt: str = ""
    guides: list[GuideTuple] = field(default_factory=list)
    outcome: Optional[SearchOutcome] = None
    error: str = ""
    feedback_applied: bool = False
    created_at: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        body = {
            "query_id": self.query_id,
            "state": self.state,
            "query": {
                "text": self.spec.text,
                "topic": self.spec.topic,
                "k": self.spec.k,
                "feedback_mode": self.spec.feedback_mode,
            },
            "created_at": self.created_at,
            "guides": [
                {"guide_id": g.guide_id, "discarded": g.discarded, "reason": g.discard_reason}
                for g in self.guides
            ],
            "results": None,
            "error": self.error or None,
            "feedback_applied": self.feedback_applied,
        }
        if self.outcome is not None:
            body["results"] = self.outcome.to_json_dict()["results"]
        return body


class SessionStore:
    """Bounded LRU of sessions; eviction drops the oldest finished entries first."""

    def __init__(self, capacity: int = 1024):
        self._capacity = capacity
        self._lock = threading.Lock()
        self._sessions: OrderedDict[str, SearchSession] = OrderedDict()

    def put(self, session: SearchSession) -> None:
        with self._lock:
            self._sessions[session.query_id] = session
            self._sessions.move_to_end(session.query_id)
            while len(self._sessions) > self._capacity:
                self._sessions.popitem(last=False)

    def get(self, query_id: str) -> SearchSession:
        with self._lock:
            session = self._sessions.get(query_id)
            if session is None:
                raise ApiError(404, "unknown_query", f"no session {query_id!r}")
            self._sessions.move_to_end(query_id)
            return session


@dataclass
class IndexJob:
    job_id: str
    dataset_id: str
    state: str = "running"
    progress: IndexProgress = field(default_factory=IndexProgress)
    errors: list[str] = field(default_factory=list)
    summary: Optional[dict] = None

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "dataset_id": self.dataset_id,
            "state": self.state,
            "progress": {
                "images_done": self.progress.images_done,
                "tiles_done": self.progress.tiles_done,
                "embeddings_done": dict(self.progress.embeddings_done),
            },
            "errors": self.errors,
            "summary": self.summary,
        }


class SearchRequest(BaseModel):
    text: str
    topic: str = "general"
    k: int = Field(default=60, ge=1)
    feedback_mode: bool = False


class ApproveRequest(BaseModel):
    keep: list[str]


class FeedbackRequest(BaseModel):
    irrelevant: list[int]


def create_app(engine: RetrievalEngine, run_async: bool = True) -> FastAPI:
    """Wire the engine into the HTTP surface.

    ``run_async=False`` executes pipeline work inline with the request, which
    keeps single-threaded test flows deterministic.
    """
    app = FastAPI(title="needle", docs_url=None, redoc_url=None)
    sessions = SessionStore()
    jobs: dict[str, IndexJob] = {}
    jobs_lock = threading.Lock()
    thumb_cache: dict[tuple[int, int], bytes] = {}

    def spawn(fn) -> None:
        if run_async:
            threading.Thread(target=fn, daemon=True).start()
        else:
            fn()

    @app.exception_handler(ApiError)
    async def handle_api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(NeedleError)
    async def handle_needle_error(_req: Request, exc: NeedleError):
        status = 400 if isinstance(exc, (ValidationError, ConfigError)) else 500
        return JSONResponse(
            status_code=status,
            content={"code": type(exc).__name__.lower(), "message": str(exc)},
        )

    # -- indexing ---------------------------------------------------------

    @app.post("/v1/datasets/{dataset_id}/index")
    def start_index(dataset_id: str, force: bool = False):
        if engine.is_indexed() and not force:
            raise ApiError(409, "already_indexed", "dataset already indexed; use ?force=true")
        job = IndexJob(job_id=uuid.uuid4().hex[:12], dataset_id=dataset_id)
        with jobs_lock:
            jobs[job.job_id] = job

        def run():
            try:
                summary = engine.index_dataset(force=force, progress=lambda p: None)
                job.progress.images_done = summary.images
                job.progress.tiles_done = summary.tiles
                job.progress.embeddings_done = dict(summary.stores)
                job.errors = summary.errors
                job.summary = {
                    "images": summary.images,
                    "tiles": summary.tiles,
                    "stores": summary.stores,
                }
                job.state = "completed" if not summary.errors else "completed_with_errors"
            except Exception as exc:
                job.state = "failed"
                job.errors.append(str(exc))

        spawn(run)
        return job.to_json()

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise ApiError(404, "unknown_job", f"no job {job_id!r}")
        return job.to_json()

    # -- search sessions -----------------------------------------------------

    def run_retrieval(session: SearchSession, apply_anomaly: bool) -> None:
        session.state = SEARCHING
        try:
            session.outcome = engine.complete_search(
                session.spec, session.prompt, session.guides, apply_anomaly=apply_anomaly
            )
            session.state = DONE
        except Exception as exc:
            session.state = FAILED
            session.error = str(exc)

    @app.post("/v1/search")
    def start_search(req: SearchRequest):
        if not req.text.strip():
            raise ApiError(400, "empty_query", "query text is empty")
        spec = QuerySpec(
            query_id=uuid.uuid4().hex[:12],
            text=req.text,
            topic=req.topic,
            k=req.k,
            feedback_mode=req.feedback_mode,
        )
        session = SearchSession(query_id=spec.query_id, spec=spec)
        sessions.put(session)

        def run():
            try:
                session.prompt, session.guides = engine.prepare_guides(spec)
            except Exception as exc:
                session.state = FAILED
                session.error = str(exc)
                return
            if spec.feedback_mode:
                session.state = AWAITING_REVIEW
            else:
                run_retrieval(session, apply_anomaly=True)

        spawn(run)
        return session.to_json()

    @app.get("/v1/search/{query_id}")
    def get_search(query_id: str):
        return sessions.get(query_id).to_json()

    @app.get("/v1/search/{query_id}/guides")
    def get_guides(query_id: str):
        session = sessions.get(query_id)
        return {
            "query_id": query_id,
            "state": session.state,
            "guides": [
                {
                    "guide_id": g.guide_id,
                    "generator_id": g.generator_id,
                    "seed": g.seed,
                    "discarded": g.discarded,
                    "reason": g.discard_reason,
                    "png_b64": base64.b64encode(encode_png(g.image)).decode("ascii"),
                }
                for g in session.guides
            ],
        }

    @app.post("/v1/search/{query_id}/guides/approve")
    def approve_guides(query_id: str, req: ApproveRequest):
        session = sessions.get(query_id)
        if session.state != AWAITING_REVIEW:
            raise ApiError(409, "not_reviewable", f"session is {session.state}, not awaiting_review")
        if not req.keep:
            raise ApiError(400, "empty_keep", "must keep at least one guide")
        known = {g.guide_id for g in session.guides}
        unknown = set(req.keep) - known
        if unknown:
            raise ApiError(400, "unknown_guides", f"unknown guide ids: {sorted(unknown)}")
        for g in session.guides:
            if g.guide_id not in req.keep:
                g.discarded = True
                g.discard_reason = "rejected at review"
        spawn(lambda: run_retrieval(session, apply_anomaly=False))
        return session.to_json()

    @app.post("/v1/search/{query_id}/feedback")
    def submit_feedback(query_id: str, req: FeedbackRequest):
        session = sessions.get(query_id)
        if session.state != DONE:
            raise ApiError(409, "not_done", f"session is {session.state}; feedback needs done")
        if session.feedback_applied:
            raise ApiError(409, "feedback_replay", "feedback was already submitted for this query")
        engine.apply_feedback(session.outcome, set(req.irrelevant))
        session.feedback_applied = True
        return {"query_id": query_id, "weights": engine.weights_snapshot()}

    @app.get("/v1/weights")
    def get_weights():
        return engine.weights_snapshot()

    # -- images ------------------------------------------------------------

    @app.get("/images/{image_id}")
    def get_image(image_id: int, thumb: int = 0):
        try:
            path = engine.image_path(image_id)
        except KeyError:
            raise ApiError(404, "unknown_image", f"no image {image_id}")
        if thumb <= 0:
            return FileResponse(path, media_type="image/png")
        key = (image_id, thumb)
        if key not in thumb_cache:
            from .tiling import load_image

            raster = load_image(path)
            h, w = raster.shape[:2]
            scale = thumb / max(w, h)
            if scale < 1.0:
                raster = cv2.resize(
                    raster, (max(1, int(w * scale)), max(1, int(h * scale))),
                    interpolation=cv2.INTER_AREA,
                )
            thumb_cache[key] = encode_png(raster)
        return Response(content=thumb_cache[key], media_type="image/png")

    return app


def serve(engine: RetrievalEngine, listen: str) -> None:
    import uvicorn

    host, _, port = listen.partition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port or 8080))
