"""Flagging of badly generated guide images via per-embedder LOF scores.

Each embedder's guide embeddings are reduced to a few dimensions, scored with
the local outlier factor, and the per-embedder scores are combined using the
topic's trust weights. Guides whose combined score exceeds the threshold are
discarded, except that the pass never discards every guide and is skipped
entirely below four guides, where neighborhood density is meaningless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

LRD_CAP = 1e12  # local reachability density for coincident points

Reducer = Callable[[np.ndarray, int], np.ndarray]
_REDUCERS: dict[str, Reducer] = {}


def register_reducer(name: str, fn: Reducer) -> None:
    _REDUCERS[name] = fn


def get_reducer(name: str) -> Reducer:
    try:
        return _REDUCERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown reducer {name!r} (registered: {sorted(_REDUCERS)})"
        ) from None


def pca_reduce(matrix: np.ndarray, d_r: int) -> np.ndarray:
    """Project rows onto the top d_r principal axes, deterministically.

    Sign convention: the first nonzero loading of every axis is positive, so
    repeated runs produce identical coordinates.
    """
    m, dim = matrix.shape
    if m < d_r + 1:
        raise ValueError(f"PCA to {d_r} dims needs at least {d_r + 1} points, got {m}")
    centered = matrix.astype(np.float64) - matrix.mean(axis=0, dtype=np.float64)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:d_r]
    for i in range(components.shape[0]):
        nonzero = np.nonzero(np.abs(components[i]) > 1e-12)[0]
        if len(nonzero) and components[i, nonzero[0]] < 0:
            components[i] = -components[i]
    return centered @ components.T


register_reducer("pca", pca_reduce)


@dataclass(frozen=True)
class AnomalyConfig:
    d_r: int = 5
    k_lof: int | None = None  # None: max(2, ceil(m/2)) clamped to m - 1
    tau: float = 1.5
    reducer: str = "pca"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.d_r < 1:
            raise ValueError("d_r must be >= 1")

    def resolve_k(self, m: int) -> int:
        if self.k_lof is not None:
            k = self.k_lof
        else:
            k = max(2, math.ceil(m / 2))
        return min(k, m - 1)


@dataclass
class ReducedEmbedding:
    guide_id: str
    embedder_id: str
    coords: np.ndarray


@dataclass
class GuideAnomaly:
    guide_id: str
    lof: dict[str, float]
    score: float
    flagged: bool


@dataclass
class AnomalyReport:
    guides: list[GuideAnomaly] = field(default_factory=list)
    skipped: bool = False
    reason: str = ""
    reduction_skipped: dict[str, bool] = field(default_factory=dict)
    lof_skipped: dict[str, bool] = field(default_factory=dict)
    config: AnomalyConfig = field(default_factory=AnomalyConfig)

    def discarded_ids(self) -> set[str]:
        return {g.guide_id for g in self.guides if g.flagged}


def reduce(
    embeddings: Mapping[str, np.ndarray],
    d_r: int,
    reducer: str = "pca",
    embedder_id: str = "",
) -> tuple[list[ReducedEmbedding], bool]:
    """Reduce one embedder's guide vectors; passes raw vectors through when
    there are too few points, reporting the skip."""
    guide_ids = list(embeddings)
    matrix = np.stack([np.asarray(embeddings[g], dtype=np.float64) for g in guide_ids])
    fn = get_reducer(reducer)
    d_eff = min(d_r, matrix.shape[1])
    if len(guide_ids) < d_eff + 1:
        coords, skipped = matrix, True
    else:
        coords, skipped = fn(matrix, d_eff), False
    return (
        [
            ReducedEmbedding(guide_id=g, embedder_id=embedder_id, coords=coords[i])
            for i, g in enumerate(guide_ids)
        ],
        skipped,
    )


def lof_scores(points: np.ndarray, k_lof: int) -> np.ndarray:
    """Local outlier factor of every row; ~1 for inliers, larger for outliers.

    Neighborhoods are the exact k nearest rows with ties broken by row index.
    Coincident points get their reachability density capped, which pins the
    score of exact duplicates at 1.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k_lof < 1:
        raise ValueError("k_lof must be >= 1")
    if n < k_lof + 1:
        raise ValueError(f"LOF with k={k_lof} needs at least {k_lof + 1} points, got {n}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    neigh = order[:, :k_lof]
    k_dist = dist[np.arange(n), neigh[:, -1]]
    # reach(p <- o) = max(k_dist(o), d(p, o))
    reach = np.maximum(k_dist[neigh], dist[np.arange(n)[:, None], neigh])
    mean_reach = reach.mean(axis=1)
    with np.errstate(divide="ignore"):
        lrd = np.where(mean_reach > 0, 1.0 / mean_reach, LRD_CAP)
    lrd = np.minimum(lrd, LRD_CAP)
    return lrd[neigh].mean(axis=1) / lrd


def aggregate_outlier(
    lof_per_embedder: Mapping[str, Mapping[str, float]],
    weights: Mapping[str, float],
) -> dict[str, float]:
    """Trust-weighted sum of per-embedder LOF scores, per guide."""
    scores: dict[str, float] = {}
    for embedder_id, per_guide in lof_per_embedder.items():
        w = weights.get(embedder_id, 0.0)
        for guide_id, lof in per_guide.items():
            scores[guide_id] = scores.get(guide_id, 0.0) + w * lof
    return scores


def flag_anomalies(scores: Mapping[str, float], tau: float) -> set[str]:
    """Guides strictly above the threshold, but never the whole set.

    When everything scores above tau, the least anomalous guide is kept so
    downstream retrieval always has at least one guide.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    flagged = {g for g, s in scores.items() if s > tau}
    if flagged and len(flagged) == len(scores):
        keep = min(scores.items(), key=lambda kv: (kv[1], kv[0]))[0]
        flagged.discard(keep)
    return flagged


def detect_anomalies(
    guide_vectors: Mapping[str, Mapping[str, np.ndarray]],
    weights: Mapping[str, float],
    config: AnomalyConfig | None = None,
) -> AnomalyReport:
    """Full pass: reduce -> LOF per embedder -> weighted aggregate -> threshold.

    ``guide_vectors`` maps embedder id -> guide id -> vector. Below four
    guides the pass is a no-op and says so in the report.
    """
    config = config or AnomalyConfig()
    report = AnomalyReport(config=config)
    guide_ids: list[str] = []
    for per_guide in guide_vectors.values():
        guide_ids = list(per_guide)
        break
    m = len(guide_ids)
    if m < 4:
        report.skipped = True
        report.reason = f"only {m} guides; outlier scoring needs at least 4"
        report.guides = [
            GuideAnomaly(guide_id=g, lof={}, score=1.0, flagged=False) for g in guide_ids
        ]
        return report

    k = config.resolve_k(m)
    d_r = min(config.d_r, m - 1)
    lof_per: dict[str, dict[str, float]] = {}
    for embedder_id, per_guide in guide_vectors.items():
        reduced, red_skipped = reduce(per_guide, d_r, config.reducer, embedder_id)
        report.reduction_skipped[embedder_id] = red_skipped
        pts = np.stack([r.coords for r in reduced])
        if len(pts) < k + 1:
            report.lof_skipped[embedder_id] = True
            lof_per[embedder_id] = {g: 1.0 for g in per_guide}
            continue
        report.lof_skipped[embedder_id] = False
        scores = lof_scores(pts, k)
        lof_per[embedder_id] = {r.guide_id: float(s) for r, s in zip(reduced, scores)}

    combined = aggregate_outlier(lof_per, weights)
    flagged = flag_anomalies(combined, config.tau)
    report.guides = [
        GuideAnomaly(
            guide_id=g,
            lof={e: lof_per[e][g] for e in lof_per},
            score=combined.get(g, 0.0),
            flagged=g in flagged,
        )
        for g in guide_ids
    ]
    return report
