"""Per-(guide, embedder) k-NN, rank fusion, and the exact mean-distance path.

Fusion scores an image by summing, over every (embedder, guide) ranked list,
the embedder's topic trust weight times a position-importance term 1/rank.
The exact path instead averages min-tile cosine distances over all
(guide, embedder) pairs and takes the k smallest means; it exists as the
reference the fused fast path is audited against on small corpora.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embedding import EmbeddingVector
from .errors import ConfigError
from .trust import TrustTable
from .vecstore import VectorStore


@dataclass(frozen=True)
class RankEntry:
    image_id: int
    best_tile_id: int
    distance: float


@dataclass
class RankedList:
    """Top-k images for one (guide, embedder) pair, deduplicated by image."""

    guide_id: str
    embedder_id: str
    entries: list[RankEntry]

    def rank_of(self, image_id: int) -> int:
        """1-based rank, or 0 when the image is absent from this list."""
        for pos, e in enumerate(self.entries, start=1):
            if e.image_id == image_id:
                return pos
        return 0


@dataclass(frozen=True)
class FusionConfig:
    k: int = 60
    tile_multiplier: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("fusion k must be >= 1")
        if self.tile_multiplier < 1:
            raise ValueError("tile_multiplier must be >= 1")


@dataclass
class ScoredImage:
    image_id: int
    score: float
    contributions: list[tuple[str, str, int]] = field(default_factory=list)  # (embedder, guide, rank)


@dataclass(frozen=True)
class DistanceEstimate:
    image_id: int
    delta_bar: float


def position_importance(rank: int, k: int) -> float:
    """1/rank inside the top-k, 0 beyond it."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1.0 / rank if rank <= k else 0.0


def collapse_tiles(results, k: int) -> list[RankEntry]:
    """Keep each image's best (minimum-distance) tile, then truncate to k.

    Ties between images at equal distance resolve by ascending image id.
    """
    best: dict[int, tuple[float, int]] = {}
    for r in results:
        cur = best.get(r.image_id)
        if cur is None or (r.distance, r.tile_id) < cur:
            best[r.image_id] = (r.distance, r.tile_id)
    ordered = sorted(best.items(), key=lambda kv: (kv[1][0], kv[0]))[:k]
    return [
        RankEntry(image_id=img, best_tile_id=tid, distance=dist)
        for img, (dist, tid) in ordered
    ]


def per_pair_knn(
    guide_vectors: Mapping[str, Mapping[str, EmbeddingVector]],
    stores: Mapping[str, VectorStore],
    k: int,
    tile_multiplier: int = 4,
) -> list[RankedList]:
    """One ranked image list per (guide, embedder).

    ``guide_vectors`` maps embedder id -> guide id -> embedded guide. The
    store is asked for ``tile_multiplier * k`` tiles so that a single dense
    image cannot crowd out the rest of the top-k after deduplication.
    """
    ranked = []
    for embedder_id, per_guide in guide_vectors.items():
        store = stores.get(embedder_id)
        if store is None:
            raise ConfigError(f"no vector store for embedder {embedder_id!r}")
        for guide_id, vec in per_guide.items():
            tiles = store.knn(vec, k * tile_multiplier)
            ranked.append(
                RankedList(
                    guide_id=guide_id,
                    embedder_id=embedder_id,
                    entries=collapse_tiles(tiles, k),
                )
            )
    return ranked


def fuse(
    ranked: Sequence[RankedList],
    trust: TrustTable,
    topic: str,
    config: FusionConfig,
) -> list[ScoredImage]:
    """Weighted reciprocal-rank aggregation across all lists, top-k by score.

    Ties in score resolve by ascending image id so output order is stable.
    """
    embedder_ids = sorted({rl.embedder_id for rl in ranked})
    weights = trust.weights_for(topic, embedder_ids)
    scores: dict[int, ScoredImage] = {}
    for rl in ranked:
        w = weights.get(rl.embedder_id, 0.0)
        for pos, entry in enumerate(rl.entries, start=1):
            s = position_importance(pos, config.k)
            if s == 0.0:
                break
            img = scores.setdefault(entry.image_id, ScoredImage(entry.image_id, 0.0))
            img.score += w * s
            img.contributions.append((rl.embedder_id, rl.guide_id, pos))
    out = sorted(scores.values(), key=lambda si: (-si.score, si.image_id))
    return out[: config.k]


def estimate_distance_exact(
    guide_vectors: Mapping[str, Mapping[str, EmbeddingVector]],
    stores: Mapping[str, VectorStore],
) -> list[DistanceEstimate]:
    """Mean over all (guide, embedder) pairs of each image's min-tile distance.

    Only meaningful on corpora small enough to scan; every embedder must
    cover the same image set.
    """
    n_embedders = len(guide_vectors)
    if n_embedders == 0:
        raise ValueError("need at least one embedder")
    if any(len(g) == 0 for g in guide_vectors.values()):
        raise ValueError("need at least one guide per embedder")

    totals: dict[int, float] = {}
    pairs = 0
    for embedder_id, per_guide in guide_vectors.items():
        store = stores.get(embedder_id)
        if store is None:
            raise ConfigError(f"no vector store for embedder {embedder_id!r}")
        tile_ids, image_ids, matrix = store.raw()
        matrix64 = matrix.astype(np.float64)
        unique_images = np.unique(image_ids)
        for vec in per_guide.values():
            dists = 1.0 - matrix64 @ vec.values.astype(np.float64)
            pairs += 1
            for img in unique_images:
                d_min = float(dists[image_ids == img].min())
                totals[int(img)] = totals.get(int(img), 0.0) + d_min
    return [
        DistanceEstimate(image_id=img, delta_bar=total / pairs)
        for img, total in sorted(totals.items())
    ]


def topk_exact(estimates: Sequence[DistanceEstimate], k: int) -> list[int]:
    """Image ids of the k smallest mean distances, ties by ascending id."""
    if not estimates:
        raise ValueError("no distance estimates to rank")
    ordered = sorted(estimates, key=lambda e: (e.delta_bar, e.image_id))
    return [e.image_id for e in ordered[:k]]
