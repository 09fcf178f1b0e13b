"""Per-embedder vector index over tiles: exact scan or HNSW graph, plus disk format.

Store files are little-endian binary: magic ``NDLE``, version u16, dim u32,
count u64, embedder id (u16 length + UTF-8), then ``count`` records of
``{tile_id u64, image_id u64, dim x f32}``. A JSON manifest sidecar records
the index kind and graph parameters; HNSW graphs are rebuilt deterministically
from the record order on load rather than serialized.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingVector
from .errors import MismatchError, StoreFormatError
from .hnsw import HnswGraph

MAGIC = b"NDLE"
VERSION = 1
AUTO_EXACT_LIMIT = 50_000  # entries; above this "auto" builds an HNSW graph


@dataclass(eq=False)
class IndexEntry:
    tile_id: int
    image_id: int
    vector: EmbeddingVector


@dataclass
class StoreManifest:
    embedder_id: str
    dim: int
    count: int
    index_kind: str  # "exact" | "hnsw"
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 100


@dataclass(frozen=True)
class KnnResult:
    tile_id: int
    image_id: int
    distance: float


class VectorStore:
    """Immutable after build; concurrent reads are safe."""

    def __init__(
        self,
        manifest: StoreManifest,
        tile_ids: np.ndarray,
        image_ids: np.ndarray,
        matrix: np.ndarray,
        graph: HnswGraph | None = None,
    ):
        self.manifest = manifest
        self._tile_ids = tile_ids
        self._image_ids = image_ids
        self._matrix = matrix
        self._matrix64 = matrix.astype(np.float64)
        self._graph = graph

    def __len__(self) -> int:
        return int(self.manifest.count)

    @property
    def embedder_id(self) -> str:
        return self.manifest.embedder_id

    def _check_query(self, query: EmbeddingVector) -> np.ndarray:
        if query.dim != self.manifest.dim:
            raise MismatchError(
                f"query dim {query.dim} does not match store dim {self.manifest.dim}"
            )
        return query.values.astype(np.float64)

    def knn(self, query: EmbeddingVector, k: int) -> list[KnnResult]:
        """k nearest tiles by cosine distance, ties broken by ascending tile id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._check_query(query)
        if len(self) == 0:
            return []
        if self._graph is None:
            dists = 1.0 - self._matrix64 @ q
            order = np.lexsort((self._tile_ids, dists))[:k]
            picked = [(float(dists[i]), i) for i in order]
        else:
            rows = self._graph.search(query.values, k)
            picked = sorted(
                ((d, row) for d, row in rows),
                key=lambda p: (p[0], int(self._tile_ids[p[1]])),
            )
        return [
            KnnResult(
                tile_id=int(self._tile_ids[i]),
                image_id=int(self._image_ids[i]),
                distance=float(d),
            )
            for d, i in picked
        ]

    def entries(self) -> list[IndexEntry]:
        return [
            IndexEntry(
                tile_id=int(self._tile_ids[i]),
                image_id=int(self._image_ids[i]),
                vector=EmbeddingVector(self.manifest.embedder_id, self._matrix[i]),
            )
            for i in range(len(self))
        ]

    def raw(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tile_ids, image_ids, float32 matrix) views for bulk consumers."""
        return self._tile_ids, self._image_ids, self._matrix


def build(
    entries: Sequence[IndexEntry],
    embedder_id: str,
    dim: int,
    index_kind: str = "auto",
    m: int = 16,
    ef_construction: int = 200,
    ef_search: int = 100,
) -> VectorStore:
    """Validate entries and assemble a queryable store."""
    seen: set[int] = set()
    for e in entries:
        if e.vector.embedder_id != embedder_id:
            raise MismatchError(
                f"entry {e.tile_id} embedded by {e.vector.embedder_id!r}, store is {embedder_id!r}"
            )
        if e.vector.dim != dim:
            raise MismatchError(f"entry {e.tile_id} has dim {e.vector.dim}, store dim {dim}")
        if e.tile_id in seen:
            raise ValueError(f"duplicate tile_id {e.tile_id}")
        seen.add(e.tile_id)

    if index_kind == "auto":
        index_kind = "exact" if len(entries) < AUTO_EXACT_LIMIT else "hnsw"
    if index_kind not in ("exact", "hnsw"):
        raise ValueError(f"unknown index kind {index_kind!r}")

    tile_ids = np.array([e.tile_id for e in entries], dtype=np.uint64)
    image_ids = np.array([e.image_id for e in entries], dtype=np.uint64)
    matrix = (
        np.stack([e.vector.values for e in entries]).astype(np.float32)
        if entries
        else np.zeros((0, dim), dtype=np.float32)
    )
    manifest = StoreManifest(
        embedder_id=embedder_id,
        dim=dim,
        count=len(entries),
        index_kind=index_kind,
        m=m,
        ef_construction=ef_construction,
        ef_search=ef_search,
    )
    graph = None
    if index_kind == "hnsw" and len(entries) > 0:
        graph = HnswGraph(dim, m=m, ef_construction=ef_construction, ef_search=ef_search)
        graph.build(matrix)
    return VectorStore(manifest, tile_ids, image_ids, matrix, graph)


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def save(store: VectorStore, path: str | Path) -> None:
    """Write the binary store plus its manifest sidecar atomically."""
    path = Path(path)
    emb = store.manifest.embedder_id.encode("utf-8")
    header = MAGIC + struct.pack(
        "<HIQH", VERSION, store.manifest.dim, store.manifest.count, len(emb)
    ) + emb
    tile_ids, image_ids, matrix = store.raw()
    record = np.dtype(
        [("tile_id", "<u8"), ("image_id", "<u8"), ("values", "<f4", (store.manifest.dim,))]
    )
    records = np.empty(len(store), dtype=record)
    records["tile_id"] = tile_ids
    records["image_id"] = image_ids
    if len(store):
        records["values"] = matrix
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())
    tmp.replace(path)
    mtmp = _manifest_path(path).with_suffix(".tmp")
    mtmp.write_text(json.dumps(asdict(store.manifest), indent=2) + "\n")
    mtmp.replace(_manifest_path(path))


def load(path: str | Path) -> VectorStore:
    """Read a store file; raises StoreFormatError on any structural damage."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise StoreFormatError(f"{path}: bad magic")
    offset = 4
    try:
        version, dim, count, emb_len = struct.unpack_from("<HIQH", data, offset)
    except struct.error as exc:
        raise StoreFormatError(f"{path}: truncated header") from exc
    if version != VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    offset += struct.calcsize("<HIQH")
    if len(data) < offset + emb_len:
        raise StoreFormatError(f"{path}: truncated embedder id")
    embedder_id = data[offset : offset + emb_len].decode("utf-8")
    offset += emb_len
    record = np.dtype([("tile_id", "<u8"), ("image_id", "<u8"), ("values", "<f4", (dim,))])
    expected = count * record.itemsize
    if len(data) - offset != expected:
        raise StoreFormatError(
            f"{path}: expected {expected} record bytes, found {len(data) - offset}"
        )
    records = np.frombuffer(data, dtype=record, count=count, offset=offset)

    manifest = StoreManifest(embedder_id=embedder_id, dim=dim, count=count, index_kind="exact")
    mpath = _manifest_path(path)
    if mpath.exists():
        side = json.loads(mpath.read_text())
        manifest = StoreManifest(**side)
        if manifest.count != count or manifest.dim != dim or manifest.embedder_id != embedder_id:
            raise StoreFormatError(f"{path}: manifest sidecar disagrees with binary header")

    matrix = np.ascontiguousarray(records["values"], dtype=np.float32)
    graph = None
    if manifest.index_kind == "hnsw" and count > 0:
        graph = HnswGraph(
            dim,
            m=manifest.m,
            ef_construction=manifest.ef_construction,
            ef_search=manifest.ef_search,
        )
        graph.build(matrix)
    return VectorStore(
        manifest,
        np.ascontiguousarray(records["tile_id"]),
        np.ascontiguousarray(records["image_id"]),
        matrix,
        graph,
    )
