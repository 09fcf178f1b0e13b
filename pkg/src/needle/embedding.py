"""Embedder registry, cosine-distance geometry, and tile embedding via adapters.

Every vector entering the engine is unit-normalized at ingestion, which makes
ranking by ascending cosine distance identical to ranking by descending inner
product, so the vector store can run plain maximum-inner-product search.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AdapterError, MismatchError, NormalizationError
from .wire import AdapterTransport, default_transport, encode_png_b64

NORM_TOL = 1e-6


@dataclass(frozen=True)
class EmbedderDescriptor:
    """Identity and contract of one embedding adapter."""

    embedder_id: str
    dim: int
    endpoint: str
    version: str = "1"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"embedder dim must be positive, got {self.dim}")


@dataclass(eq=False)
class EmbeddingVector:
    """Unit-norm float32 vector tagged with the embedder that produced it."""

    embedder_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ValueError("embedding values must be a 1-d vector")
        norm = float(np.linalg.norm(self.values.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOL:
            raise NormalizationError(
                f"embedding from {self.embedder_id!r} is not unit-norm (|v|={norm:.8f})"
            )

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def normalize(values: Sequence[float] | np.ndarray, embedder_id: str = "") -> EmbeddingVector:
    """Scale a raw vector to unit L2 norm, preserving direction."""
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm <= 0.0 or not np.isfinite(norm):
        raise NormalizationError("cannot normalize a zero or non-finite vector")
    return EmbeddingVector(embedder_id, (arr / norm).astype(np.float32))


def cosine_distance(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """1 - <u, v> for unit vectors; 0 for identical, 2 for opposite directions.

    Accumulates the dot product in float64 even though storage is float32.
    """
    if u.embedder_id != v.embedder_id:
        raise MismatchError(
            f"cannot compare vectors from {u.embedder_id!r} and {v.embedder_id!r}"
        )
    if u.dim != v.dim:
        raise MismatchError(f"dim mismatch: {u.dim} vs {v.dim}")
    dot = float(np.dot(u.values.astype(np.float64), v.values.astype(np.float64)))
    return 1.0 - dot


class EmbedderRegistry:
    """Read-mostly set of embedder descriptors; mutations take the lock."""

    def __init__(self, descriptors: Iterable[EmbedderDescriptor] = ()):
        self._lock = threading.Lock()
        self._by_id: dict[str, EmbedderDescriptor] = {}
        for d in descriptors:
            self.add(d)

    def add(self, descriptor: EmbedderDescriptor) -> None:
        with self._lock:
            if descriptor.embedder_id in self._by_id:
                raise ValueError(f"duplicate embedder id {descriptor.embedder_id!r}")
            self._by_id[descriptor.embedder_id] = descriptor

    def remove(self, embedder_id: str) -> None:
        with self._lock:
            del self._by_id[embedder_id]

    def get(self, embedder_id: str) -> EmbedderDescriptor:
        return self._by_id[embedder_id]

    def ids(self) -> list[str]:
        return list(self._by_id)

    def descriptors(self) -> list[EmbedderDescriptor]:
        return list(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, embedder_id: str) -> bool:
        return embedder_id in self._by_id


def embed_tiles(
    embedder: EmbedderDescriptor,
    images: Sequence[np.ndarray],
    transport: AdapterTransport | None = None,
    batch_size: int = 64,
) -> list[EmbeddingVector]:
    """Embed rasters through the adapter protocol, one vector per input in order.

    Batching is transparent: the result equals per-image calls. Vectors are
    normalized on receipt, so a slightly off-norm adapter response is repaired
    rather than rejected.
    """
    transport = transport or default_transport()
    out: list[EmbeddingVector] = []
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        payload = {
            "embedder_id": embedder.embedder_id,
            "images": [
                {"id": str(start + i), "png_b64": encode_png_b64(img)}
                for i, img in enumerate(batch)
            ],
        }
        try:
            resp = transport.post(embedder.endpoint, "/v1/embed", payload)
        except AdapterError:
            raise
        except Exception as exc:
            raise AdapterError(f"embed request failed: {exc}", embedder.embedder_id) from exc
        if resp.get("dim") != embedder.dim:
            raise AdapterError(
                f"adapter returned dim {resp.get('dim')}, descriptor says {embedder.dim}",
                embedder.embedder_id,
            )
        by_id = {v["id"]: v["values"] for v in resp.get("vectors", [])}
        for i in range(len(batch)):
            values = by_id.get(str(start + i))
            if values is None or len(values) != embedder.dim:
                raise AdapterError(
                    f"missing or malformed vector for image {start + i}",
                    embedder.embedder_id,
                )
            try:
                out.append(normalize(values, embedder.embedder_id))
            except NormalizationError as exc:
                raise AdapterError(str(exc), embedder.embedder_id) from exc
    return out
