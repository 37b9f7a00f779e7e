"""HTTP hosts for the model and embedding wire protocols.

Model protocol: POST /sessions, POST /sessions/{id}/fine_tune,
POST /sessions/{id}/generate, GET /info, DELETE /sessions/{id}.
Embedding protocol: POST /embed, GET /info.

The bundled model backends are text-only simulations (the wire carries no
example ids, so gold-data lookups are impossible): the explainer derives a
deterministic pseudo-explanation from its input, the predictor emits
seeded labels. They exercise the protocols and the annotation service end
to end; real deployments put actual seq2seq models behind the same routes.
"""

from __future__ import annotations

import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .corpus import LABELS
from .embedding import HashedTfEmbedder, fnv1a_64
from .modeling import DEFAULT_SEPARATOR_TOKEN


class EchoExplainer:
    """Deterministic stand-in explainer: summarizes its input text."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.trained_pairs_total = 0

    def fine_tune(self, pairs, hp=None) -> int:
        self.trained_pairs_total += len(pairs)
        return self.trained_pairs_total

    def generate(self, inputs) -> list[str]:
        outputs = []
        for text in inputs:
            words = text.split()
            head = " ".join(words[5:11]) if len(words) > 5 else text
            tag = fnv1a_64(text.encode("utf-8")) % 10_000
            outputs.append(f"the statement about {head} is case {tag:04d}")
        return outputs

    def reset(self) -> None:
        self.trained_pairs_total = 0


class SeededLabelPredictor:
    """Protocol-correct predictor: emits labels from a seeded stream."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self.trained_pairs_total = 0

    def fine_tune(self, pairs, hp=None) -> int:
        self.trained_pairs_total += len(pairs)
        return self.trained_pairs_total

    def generate(self, inputs) -> list[str]:
        return [LABELS[int(self._rng.integers(len(LABELS)))] for _ in inputs]

    def reset(self) -> None:
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.trained_pairs_total = 0


class TrainPairIn(BaseModel):
    input: str
    target: str


class FineTuneRequest(BaseModel):
    pairs: list[TrainPairIn]
    hyperparameters: dict = Field(default_factory=dict)


class GenerateRequest(BaseModel):
    inputs: list[str]


class CreateModelSessionRequest(BaseModel):
    model: str


def build_model_app(seed: int = 0, separator_token: str = DEFAULT_SEPARATOR_TOKEN,
                    max_input_length: int = 512) -> FastAPI:
    app = FastAPI(title="model service")
    sessions: dict[str, object] = {}

    @app.get("/info")
    def info():
        return {"separator_token": separator_token, "max_input_length": max_input_length}

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateModelSessionRequest):
        if request.model not in ("explainer", "predictor"):
            raise HTTPException(status_code=400, detail=f"unknown model {request.model!r}")
        session_id = uuid.uuid4().hex[:12]
        if request.model == "explainer":
            sessions[session_id] = EchoExplainer(seed=seed)
        else:
            sessions[session_id] = SeededLabelPredictor(seed=seed)
        return {"session_id": session_id, "model": request.model}

    def _backend(session_id: str):
        backend = sessions.get(session_id)
        if backend is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return backend

    @app.post("/sessions/{session_id}/fine_tune")
    def fine_tune(session_id: str, request: FineTuneRequest):
        backend = _backend(session_id)
        total = backend.fine_tune(request.pairs)
        return {"trained_pairs_total": total}

    @app.post("/sessions/{session_id}/generate")
    def generate(session_id: str, request: GenerateRequest):
        backend = _backend(session_id)
        return {"outputs": backend.generate(request.inputs)}

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        _backend(session_id).reset()
        del sessions[session_id]
        return {"deleted": session_id}

    return app


class EmbedRequest(BaseModel):
    texts: list[str]


def build_embedding_app(dimension: int = 1024) -> FastAPI:
    """Serve the built-in embedder over the remote-embedding protocol."""
    app = FastAPI(title="embedding service")
    embedder = HashedTfEmbedder(dimension=dimension, memoize=True)

    @app.get("/info")
    def info():
        return {"dimension": dimension}

    @app.post("/embed")
    def embed(request: EmbedRequest):
        vectors = [v.values.tolist() for v in embedder.embed_many(request.texts)]
        return {"vectors": vectors}

    return app
