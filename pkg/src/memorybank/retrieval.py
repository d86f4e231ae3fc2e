"""Dense retrieval over memory pieces: embed, index, top-k search.

Queries and pieces are embedded independently by the same encoder and
ranked by inner product of unit vectors (equal to cosine similarity).
The exact_flat backend scores every live entry; ties break by older
timestamp, then piece id, so rankings are reproducible.
"""

from __future__ import annotations

import datetime as dt
import re
import zlib
from dataclasses import dataclass
from typing import Iterable, Protocol, runtime_checkable

import numpy as np

from .errors import AdapterUnavailableError, DimensionMismatchError, EmptyTextError

DEFAULT_DIM = 384

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

# Sort key placeholder for entries registered without a timestamp.
_EPOCH = dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)


class EmbeddingVector:
    """Fixed-length, unit-normalized representation of a text.

    Normalization happens at construction; values are immutable.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("embedding must have at least one component")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("embedding must have a finite non-zero norm")
        arr = arr / norm
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def from_normalized(cls, values) -> "EmbeddingVector":
        """Adopt already-normalized components verbatim (lossless loads)."""
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"values are not unit-normalized (norm={norm})")
        arr = arr.copy()
        arr.setflags(write=False)
        vec = object.__new__(cls)
        vec._values = arr
        return vec

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return int(self._values.shape[0])

    def inner(self, other: "EmbeddingVector") -> float:
        if other.dim != self.dim:
            raise DimensionMismatchError(self.dim, other.dim)
        return float(np.dot(self._values, other._values))

    def to_list(self) -> list[float]:
        return [float(x) for x in self._values]

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(
            self._values, other._values
        )

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim})"


@runtime_checkable
class Embedder(Protocol):
    """Encoder contract: deterministic per adapter, unit-normalized output."""

    identity: str
    dim: int

    def embed(self, text: str) -> EmbeddingVector: ...


class HashingEmbedder:
    """Built-in deterministic embedder for tests and offline use.

    Lowercases, tokenizes on whitespace/punctuation, hashes each token
    to one of ``dim`` buckets (CRC32, stable across processes),
    accumulates counts, and L2-normalizes.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.identity = f"hashing-{dim}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyTextError("cannot embed empty text")
        counts = np.zeros(self.dim, dtype=np.float64)
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            # Punctuation-only input: hash the raw text as one token so
            # the result is still a valid unit vector.
            tokens = [text]
        for token in tokens:
            counts[zlib.crc32(token.encode("utf-8")) % self.dim] += 1.0
        return EmbeddingVector(counts)


class RemoteEmbedder:
    """Client for an embeddings HTTP endpoint.

    Speaks the widely-implemented convention: request
    ``{"model": ..., "input": [text, ...]}``, response
    ``{"data": [{"embedding": [...]}, ...]}``.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        dim: int = DEFAULT_DIM,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.dim = dim
        self.timeout = timeout
        self.identity = f"remote:{model}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyTextError("cannot embed empty text")
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(
                f"{self.endpoint}/v1/embeddings",
                json={"model": self.model, "input": [text]},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            data = resp.json()["data"]
            vector = EmbeddingVector(data[0]["embedding"])
        except Exception as exc:  # noqa: BLE001 - wrapped with cause
            raise AdapterUnavailableError(
                f"embedding endpoint {self.endpoint} failed: {exc}", cause=exc
            ) from exc
        if vector.dim != self.dim:
            self.dim = vector.dim
        return vector


@dataclass
class SearchHit:
    """One retrieval result; ranks are contiguous from 1."""

    piece_id: str
    score: float
    rank: int


@dataclass
class _Entry:
    vector: EmbeddingVector
    at: dt.datetime


class MemoryIndex:
    """Flat inner-product index over piece embeddings.

    Only the exact_flat backend ships; it is equivalent to a brute-force
    scan by construction. The dimension locks at the first insert when
    not given up front.
    """

    SUPPORTED_BACKENDS = ("exact_flat",)

    def __init__(self, dim: int | None = None, backend: str = "exact_flat"):
        if backend not in self.SUPPORTED_BACKENDS:
            raise ValueError(
                f"unsupported backend {backend!r}; available: {self.SUPPORTED_BACKENDS}"
            )
        self.backend = backend
        self.dim = dim
        self._entries: dict[str, _Entry] = {}
        self._matrix: np.ndarray | None = None
        self._ids: list[str] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, piece_id: str) -> bool:
        return piece_id in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def vector_of(self, piece_id: str) -> EmbeddingVector:
        return self._entries[piece_id].vector

    def upsert(
        self,
        piece_id: str,
        vector: EmbeddingVector,
        at: dt.datetime | None = None,
    ) -> "MemoryIndex":
        """Insert or replace one entry; replacing keeps the latest vector."""
        if self.dim is None:
            self.dim = vector.dim
        if vector.dim != self.dim:
            raise DimensionMismatchError(self.dim, vector.dim)
        self._entries[piece_id] = _Entry(vector=vector, at=at or _EPOCH)
        self._matrix = None
        return self

    def remove(self, piece_id: str) -> None:
        if self._entries.pop(piece_id, None) is not None:
            self._matrix = None

    def _ensure_matrix(self) -> None:
        if self._matrix is None:
            self._ids = list(self._entries)
            if self._ids:
                self._matrix = np.stack(
                    [self._entries[i].vector.values for i in self._ids]
                )
            else:
                self._matrix = np.zeros((0, self.dim or 1))

    def search(self, query: EmbeddingVector, k: int) -> list[SearchHit]:
        """Top-k entries by inner product.

        Ties break by (older timestamp, piece_id). Returns fewer than k
        hits when the index is smaller than k.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._entries:
            return []
        if self.dim is not None and query.dim != self.dim:
            raise DimensionMismatchError(self.dim, query.dim)
        self._ensure_matrix()
        scores = self._matrix @ query.values
        order = sorted(
            range(len(self._ids)),
            key=lambda i: (
                -scores[i],
                self._entries[self._ids[i]].at,
                self._ids[i],
            ),
        )
        hits = []
        for rank, i in enumerate(order[:k], start=1):
            hits.append(SearchHit(piece_id=self._ids[i], score=float(scores[i]), rank=rank))
        return hits

    @classmethod
    def rebuild(
        cls,
        entries: Iterable[tuple[str, EmbeddingVector, dt.datetime | None]],
        dim: int | None = None,
        backend: str = "exact_flat",
    ) -> "MemoryIndex":
        """Reconstruct an index from persisted pieces; search results are
        identical to incremental upserts of the same entries."""
        index = cls(dim=dim, backend=backend)
        for piece_id, vector, at in entries:
            index.upsert(piece_id, vector, at)
        return index
