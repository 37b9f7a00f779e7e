"""REST surface for the annotation service (JSON over HTTP)."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .service import (
    AnnotationService,
    BatchMismatchError,
    InvalidConfigError,
    PhaseError,
    ServiceError,
    UnknownResourceError,
)


class CreateSessionRequest(BaseModel):
    dataset: str
    config: dict = Field(default_factory=dict)


class AnnotationIn(BaseModel):
    example_id: str
    label: str
    explanation: str
    annotator_id: str = ""
    timestamp: float = 0.0


class SubmitAnnotationsRequest(BaseModel):
    events: list[AnnotationIn]


def build_app(service: AnnotationService, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def handle_service_error(request: Request, exc: ServiceError):
        body = {"detail": str(exc)}
        if isinstance(exc, BatchMismatchError):
            body["missing"] = exc.missing
            body["unknown"] = exc.unknown
        return JSONResponse(status_code=exc.status_code, content=body)

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest):
        session_id = service.create_session(request.dataset, request.config)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}/batch/current")
    def current_batch(session_id: str):
        # Read-only view of the batch awaiting annotations; lets a client
        # resume after restart without driving a phase transition.
        return service.current_batch(session_id)

    @app.get("/sessions/{session_id}/batch")
    def next_batch(session_id: str):
        return service.next_batch(session_id)

    @app.post("/sessions/{session_id}/annotations", status_code=202)
    def submit_annotations(session_id: str, request: SubmitAnnotationsRequest):
        return service.submit_annotations(
            session_id, [event.model_dump() for event in request.events]
        )

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        return service.get_metrics(session_id)

    @app.get("/sessions/{session_id}/examples/{example_id}")
    def get_example(session_id: str, example_id: str):
        return service.get_example(session_id, example_id)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


__all__ = [
    "build_app",
    "AnnotationService",
    "InvalidConfigError",
    "PhaseError",
    "UnknownResourceError",
]
