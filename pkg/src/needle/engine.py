"""End-to-end orchestration: corpus indexing and the query pipeline.

Indexing tiles every image, embeds every tile with every configured embedder,
and persists one store per embedder. A search refines the text into a prompt,
generates guide images, filters bad guides (automatically or by user review),
embeds the survivors, runs per-(guide, embedder) k-NN, and fuses the ranked
lists under the topic's trust weights.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .anomaly import AnomalyReport, detect_anomalies
from .config import ServiceConfig
from .embedding import EmbedderRegistry, EmbeddingVector, embed_tiles
from .errors import ConfigError, GenerationError, ValidationError
from .generation import GuideTuple, QuerySpec, generate_all, refine_query
from .retrieval import FusionConfig, RankedList, ScoredImage, fuse, per_pair_knn
from .tiling import (
    ImageManifestEntry,
    build_manifest,
    detect_objects,
    load_image,
    load_manifest,
    save_manifest,
    smart_tile,
)
from .trust import FeedbackSet, TrustTable, load_trust, partial_loss, save_trust, update_weights
from .vecstore import IndexEntry, VectorStore, build as build_store, load as load_store
from .wire import AdapterTransport, default_transport

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class IndexProgress:
    images_done: int = 0
    tiles_done: int = 0
    embeddings_done: dict[str, int] = field(default_factory=dict)


@dataclass
class IndexSummary:
    images: int
    tiles: int
    stores: dict[str, int]  # embedder id -> entry count
    errors: list[str] = field(default_factory=list)


@dataclass
class SearchOutcome:
    query: QuerySpec
    prompt: str
    results: list[ScoredImage]
    ranked: list[RankedList]
    guides: list[GuideTuple]
    anomaly_report: AnomalyReport | None = None

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query.query_id,
            "results": [
                {"image_id": r.image_id, "score": r.score, "rank": i + 1}
                for i, r in enumerate(self.results)
            ],
            "guides": [
                {"guide_id": g.guide_id, "discarded": g.discarded, "reason": g.discard_reason}
                for g in self.guides
            ],
        }


class RetrievalEngine:
    """Owns the stores, the trust table, and the adapter plumbing for one corpus."""

    def __init__(self, config: ServiceConfig, transport: AdapterTransport | None = None):
        self.config = config
        self.transport = transport or default_transport()
        self.registry = EmbedderRegistry(config.embedders)
        self.generators = list(config.generators)
        self._stores: dict[str, VectorStore] | None = None
        self._image_files: dict[int, str] | None = None
        self._trust_lock = threading.Lock()
        if Path(config.trust_path).exists():
            self.trust = load_trust(config.trust_path)
        else:
            self.trust = TrustTable(eta=config.eta, floor=config.weight_floor)

    # -- indexing ------------------------------------------------------------

    def _dataset_files(self) -> list[Path]:
        root = Path(self.config.dataset_root)
        if not root.is_dir():
            raise ConfigError(f"dataset root {root} is not a directory")
        return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

    def is_indexed(self) -> bool:
        index_dir = Path(self.config.index_dir)
        return (index_dir / "tiles.json").exists()

    def index_dataset(
        self,
        force: bool = False,
        progress: Callable[[IndexProgress], None] | None = None,
    ) -> IndexSummary:
        """Tile, embed, and persist every image under the dataset root."""
        index_dir = Path(self.config.index_dir)
        if self.is_indexed() and not force:
            raise ConfigError(f"{index_dir} is already indexed; pass force to rebuild")
        index_dir.mkdir(parents=True, exist_ok=True)
        files = self._dataset_files()
        prog = IndexProgress()
        errors: list[str] = []

        tilesets = []
        rasters: dict[int, np.ndarray] = {}
        for image_id, path in enumerate(files):
            try:
                raster = load_image(path)
            except Exception as exc:
                errors.append(f"{path.name}: {exc}")
                continue
            objects = detect_objects(raster)
            h, w = raster.shape[:2]
            tilesets.append((image_id, smart_tile((w, h), objects, self.config.tiling)))
            rasters[image_id] = raster
            prog.images_done += 1
            if progress:
                progress(prog)
        manifest = build_manifest(tilesets)
        prog.tiles_done = sum(len(e.tiles) for e in manifest)
        if progress:
            progress(prog)

        crops: list[tuple[int, int, np.ndarray]] = []  # (tile_id, image_id, crop)
        for entry in manifest:
            raster = rasters[entry.image_id]
            for t in entry.tiles:
                r = t.rect
                crops.append((t.tile_id, entry.image_id, raster[r.y : r.bottom, r.x : r.right]))

        store_counts: dict[str, int] = {}
        for descriptor in self.registry.descriptors():
            vectors = embed_tiles(
                descriptor, [c[2] for c in crops], transport=self.transport
            )
            entries = [
                IndexEntry(tile_id=tid, image_id=img, vector=vec)
                for (tid, img, _), vec in zip(crops, vectors)
            ]
            store = build_store(
                entries,
                embedder_id=descriptor.embedder_id,
                dim=descriptor.dim,
                index_kind=self.config.store_kind,
            )
            from .vecstore import save as save_store

            save_store(store, index_dir / f"{descriptor.embedder_id}.ndle")
            store_counts[descriptor.embedder_id] = len(store)
            prog.embeddings_done[descriptor.embedder_id] = len(entries)
            if progress:
                progress(prog)

        save_manifest(manifest, index_dir / "tiles.json")
        (index_dir / "images.json").write_text(
            json.dumps({str(i): p.name for i, p in enumerate(files)}, indent=2) + "\n"
        )
        self._stores = None  # force reload on next search
        self._image_files = None
        return IndexSummary(
            images=prog.images_done,
            tiles=prog.tiles_done,
            stores=store_counts,
            errors=errors,
        )

    # -- store access ----------------------------------------------------------

    def stores(self) -> dict[str, VectorStore]:
        if self._stores is None:
            index_dir = Path(self.config.index_dir)
            loaded = {}
            for descriptor in self.registry.descriptors():
                path = index_dir / f"{descriptor.embedder_id}.ndle"
                if not path.exists():
                    raise ConfigError(
                        f"no store for embedder {descriptor.embedder_id!r}; index the dataset first"
                    )
                loaded[descriptor.embedder_id] = load_store(path)
            self._stores = loaded
        return self._stores

    def tile_manifest(self) -> list[ImageManifestEntry]:
        return load_manifest(Path(self.config.index_dir) / "tiles.json")

    def image_path(self, image_id: int) -> Path:
        if self._image_files is None:
            mapping_file = Path(self.config.index_dir) / "images.json"
            if not mapping_file.exists():
                raise ConfigError("dataset is not indexed")
            raw = json.loads(mapping_file.read_text())
            self._image_files = {int(k): v for k, v in raw.items()}
        name = self._image_files.get(image_id)
        if name is None:
            raise KeyError(f"unknown image id {image_id}")
        return Path(self.config.dataset_root) / name

    # -- query pipeline ----------------------------------------------------------

    def prepare_guides(self, query: QuerySpec) -> tuple[str, list[GuideTuple]]:
        """Refine the query and generate guides from every configured generator."""
        prompt = refine_query(query.text, self.config.refinement)
        guides = generate_all(
            self.generators,
            prompt,
            m_per_generator=self.config.guides_per_generator,
            size=self.config.guide_size,
            base_seed=self.config.base_seed,
            query_id=query.query_id,
            transport=self.transport,
        )
        return prompt, guides

    def _embed_guides(
        self, guides: list[GuideTuple]
    ) -> dict[str, dict[str, EmbeddingVector]]:
        surviving = [g for g in guides if not g.discarded]
        vectors: dict[str, dict[str, EmbeddingVector]] = {}
        for descriptor in self.registry.descriptors():
            embedded = embed_tiles(
                descriptor, [g.image for g in surviving], transport=self.transport
            )
            vectors[descriptor.embedder_id] = {
                g.guide_id: v for g, v in zip(surviving, embedded)
            }
        return vectors

    def complete_search(
        self,
        query: QuerySpec,
        prompt: str,
        guides: list[GuideTuple],
        apply_anomaly: bool = True,
    ) -> SearchOutcome:
        """Embed surviving guides, run k-NN per pair, and fuse the rankings."""
        if not any(not g.discarded for g in guides):
            raise GenerationError("no surviving guides to search with")
        guide_vectors = self._embed_guides(guides)

        report = None
        if apply_anomaly:
            weights = self.trust.weights_for(query.topic, self.registry.ids())
            raw = {
                e: {gid: vec.values for gid, vec in per.items()}
                for e, per in guide_vectors.items()
            }
            report = detect_anomalies(raw, weights, self.config.anomaly)
            for guide in guides:
                match = next((g for g in report.guides if g.guide_id == guide.guide_id), None)
                if match and match.flagged:
                    guide.discarded = True
                    guide.discard_reason = (
                        f"lof_score={match.score:.4f}, tau={self.config.anomaly.tau}"
                    )
            dropped = report.discarded_ids()
            if dropped:
                guide_vectors = {
                    e: {gid: v for gid, v in per.items() if gid not in dropped}
                    for e, per in guide_vectors.items()
                }

        ranked = per_pair_knn(
            guide_vectors,
            self.stores(),
            k=query.k,
            tile_multiplier=self.config.fusion.tile_multiplier,
        )
        fusion = FusionConfig(k=query.k, tile_multiplier=self.config.fusion.tile_multiplier)
        results = fuse(ranked, self.trust, query.topic, fusion)
        return SearchOutcome(
            query=query,
            prompt=prompt,
            results=results,
            ranked=ranked,
            guides=guides,
            anomaly_report=report,
        )

    def search(self, query: QuerySpec) -> SearchOutcome:
        """The no-review path: generate, auto-filter anomalies, retrieve."""
        prompt, guides = self.prepare_guides(query)
        return self.complete_search(query, prompt, guides, apply_anomaly=True)

    # -- feedback ------------------------------------------------------------

    def apply_feedback(self, outcome: SearchOutcome, irrelevant_ids: set[int]) -> TrustTable:
        """Fold one feedback set into the topic's weights and persist them."""
        result_ids = [r.image_id for r in outcome.results]
        feedback = FeedbackSet(query_id=outcome.query.query_id, irrelevant=set(irrelevant_ids))
        losses = partial_loss(outcome.ranked, feedback, outcome.query.k, result_ids)
        with self._trust_lock:
            self.trust.ensure_topic(outcome.query.topic, self.registry.ids())
            update_weights(self.trust, outcome.query.topic, losses)
            save_trust(self.trust, self.config.trust_path)
        return self.trust

    def weights_snapshot(self) -> dict:
        from .trust import to_json_dict

        return to_json_dict(self.trust)
