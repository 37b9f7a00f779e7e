"""Text embedding and cosine similarity.

The built-in embedder is a hashed term-frequency model: lowercase, split on
non-alphanumeric runs, hash each token into ``dimension`` buckets with
FNV-1a 64, count, and L2-normalize. It is corpus-independent and fully
deterministic, which is what the selector contract needs from its
similarity oracle. A remote embedder client speaks the JSON protocol
``POST /embed {texts} -> {vectors}`` / ``GET /info``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Runs of Unicode alphanumerics; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

DEFAULT_DIMENSION = 1024


class EmbeddingError(ValueError):
    """Raised for dimension mismatches and remote protocol failures."""


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash; stable across platforms and Python versions."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense vector, unit-normalized unless flagged empty (all zeros)."""

    values: np.ndarray
    empty: bool

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "builtin_hashed_tf"  # builtin_hashed_tf | remote
    dimension: int = DEFAULT_DIMENSION
    tokenizer: str = "lower-alnum-runs"
    remote_endpoint: Optional[str] = None

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise EmbeddingError("dimension must be >= 2")
        if self.backend == "remote" and not self.remote_endpoint:
            raise EmbeddingError("remote backend requires remote_endpoint")
        if self.backend not in ("builtin_hashed_tf", "remote"):
            raise EmbeddingError(f"unknown embedder backend {self.backend!r}")


class HashedTfEmbedder:
    """Deterministic hashed term-frequency embedder.

    ``memoize=True`` keeps an in-memory text -> vector map, useful when the
    same candidate contents are re-scored every iteration.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, memoize: bool = False):
        if dimension < 2:
            raise EmbeddingError("dimension must be >= 2")
        self.dimension = dimension
        self._bucket_memo: dict[str, int] = {}
        self._text_memo: dict[str, EmbeddingVector] | None = {} if memoize else None

    def _bucket(self, token: str) -> int:
        bucket = self._bucket_memo.get(token)
        if bucket is None:
            bucket = fnv1a_64(token.encode("utf-8")) % self.dimension
            self._bucket_memo[token] = bucket
        return bucket

    def embed(self, text: str) -> EmbeddingVector:
        if self._text_memo is not None:
            cached = self._text_memo.get(text)
            if cached is not None:
                return cached
        values = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            values[self._bucket(token)] += 1.0
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            vector = EmbeddingVector(values=values, empty=True)
        else:
            vector = EmbeddingVector(values=values / norm, empty=False)
        if self._text_memo is not None:
            self._text_memo[text] = vector
        return vector

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for an external embedding service.

    Vectors returned by the service are re-normalized locally so the
    unit-norm invariant holds regardless of the remote implementation.
    """

    def __init__(self, endpoint: str, client=None, memoize: bool = False):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(base_url=self.endpoint, timeout=30.0)
        self._text_memo: dict[str, EmbeddingVector] | None = {} if memoize else None
        self.dimension = self._fetch_dimension()

    def _fetch_dimension(self) -> int:
        try:
            response = self._client.get("/info")
            response.raise_for_status()
            return int(response.json()["dimension"])
        except Exception as exc:
            raise EmbeddingError(f"embedding service {self.endpoint}: /info failed: {exc}") from exc

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        out: list[Optional[EmbeddingVector]] = [None] * len(texts)
        missing: list[int] = []
        if self._text_memo is not None:
            for i, t in enumerate(texts):
                cached = self._text_memo.get(t)
                if cached is not None:
                    out[i] = cached
                else:
                    missing.append(i)
        else:
            missing = list(range(len(texts)))
        if missing:
            payload = {"texts": [texts[i] for i in missing]}
            try:
                response = self._client.post("/embed", json=payload)
                response.raise_for_status()
                vectors = response.json()["vectors"]
            except Exception as exc:
                raise EmbeddingError(f"embedding service {self.endpoint}: /embed failed: {exc}") from exc
            if len(vectors) != len(missing):
                raise EmbeddingError(
                    f"embedding service {self.endpoint}: sent {len(missing)} texts, got {len(vectors)} vectors"
                )
            for i, raw in zip(missing, vectors):
                values = np.asarray(raw, dtype=np.float64)
                if values.shape != (self.dimension,):
                    raise EmbeddingError(
                        f"embedding service {self.endpoint}: expected dimension {self.dimension}, got {values.shape}"
                    )
                norm = float(np.linalg.norm(values))
                if norm == 0.0:
                    vector = EmbeddingVector(values=values, empty=True)
                else:
                    vector = EmbeddingVector(values=values / norm, empty=False)
                out[i] = vector
                if self._text_memo is not None:
                    self._text_memo[texts[i]] = vector
        return [v for v in out if v is not None]


def make_embedder(config: EmbedderConfig, memoize: bool = False):
    if config.backend == "builtin_hashed_tf":
        return HashedTfEmbedder(dimension=config.dimension, memoize=memoize)
    return RemoteEmbedder(config.remote_endpoint or "", memoize=memoize)


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of two vectors; 0.0 if either is flagged empty."""
    if a.dimension != b.dimension:
        raise EmbeddingError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    if a.empty or b.empty:
        return 0.0
    return float(np.dot(a.values, b.values))


def centroid(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    """Component-wise mean of the raw vector values, NOT renormalized.

    For unit vectors, ``dot(u, centroid(vs))`` equals the mean of
    ``similarity(u, v)`` over ``vs`` exactly (linearity of the dot product);
    empty vectors contribute zeros on both sides, so the identity survives
    them. The selector exploits this for one-pass O(n*d) scoring.
    """
    if not vectors:
        raise EmbeddingError("centroid of an empty list is undefined")
    dimension = vectors[0].dimension
    for v in vectors:
        if v.dimension != dimension:
            raise EmbeddingError(f"dimension mismatch: {v.dimension} vs {dimension}")
    stacked = np.stack([v.values for v in vectors])
    return stacked.mean(axis=0)
