"""Topic-conditioned embedder reliability weights with multiplicative updates.

Weights live per topic, always sum to 1, and never fall below a small floor
so an embedder can recover from a bad streak. Feedback turns into a bounded
per-embedder loss (how prominently the embedder ranked results the user
rejected) and each update multiplies by ``1 - eta * loss`` before
renormalizing.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ValidationError

SUM_TOL = 1e-9


@dataclass
class FeedbackSet:
    query_id: str
    irrelevant: set[int]


@dataclass
class TrustTable:
    eta: float = 0.1
    floor: float = 1e-4
    topics: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.floor <= 0.0:
            raise ValueError("weight floor must be positive")

    def ensure_topic(self, topic: str, embedder_ids: Sequence[str]) -> dict[str, float]:
        """Initialize a topic uniformly, and absorb newly registered embedders."""
        weights = self.topics.setdefault(topic, {})
        known = [e for e in embedder_ids if e in weights]
        fresh = [e for e in embedder_ids if e not in weights]
        if not known:
            n = len(embedder_ids)
            self.topics[topic] = {e: 1.0 / n for e in embedder_ids}
        elif fresh:
            # each newcomer enters at 1/l of the grown registry; incumbents
            # shrink proportionally so the topic still sums to 1
            l_new = len(known) + len(fresh)
            scale = 1.0 - len(fresh) / l_new
            rebuilt = {e: weights[e] * scale for e in known}
            for e in fresh:
                rebuilt[e] = 1.0 / l_new
            self.topics[topic] = rebuilt
        return self.topics[topic]

    def weights_for(self, topic: str, embedder_ids: Sequence[str]) -> dict[str, float]:
        """Current weights for a topic; uniform when the topic is unseen."""
        weights = self.topics.get(topic)
        if weights is None or any(e not in weights for e in embedder_ids):
            if not embedder_ids:
                return {}
            n = len(embedder_ids)
            return {e: 1.0 / n for e in embedder_ids}
        return {e: weights[e] for e in embedder_ids}


def partial_loss(
    ranked,
    feedback: FeedbackSet,
    k: int,
    result_ids: Sequence[int],
    importance=None,
) -> dict[str, float]:
    """Per-embedder loss in [0, 1] from a set of user-rejected result images.

    Raw loss sums the position importance of every rejected image across all
    of the embedder's per-guide lists; dividing by ``|rejected| * guides``
    bounds it by 1 since a single term is at most S(1) = 1.
    """
    from .retrieval import position_importance

    importance = importance or position_importance
    allowed = set(result_ids)
    missing = feedback.irrelevant - allowed
    if missing:
        raise ValidationError(
            f"feedback for {feedback.query_id!r} references images not in the results: "
            f"{sorted(missing)}"
        )
    embedder_ids = sorted({rl.embedder_id for rl in ranked})
    guide_ids = {rl.guide_id for rl in ranked}
    losses = {e: 0.0 for e in embedder_ids}
    if not feedback.irrelevant or not guide_ids:
        return losses
    for rl in ranked:
        for image_id in feedback.irrelevant:
            rank = rl.rank_of(image_id)
            if rank:
                losses[rl.embedder_id] += importance(rank, k)
    denom = len(feedback.irrelevant) * len(guide_ids)
    return {e: v / denom for e, v in losses.items()}


def update_weights(
    table: TrustTable,
    topic: str,
    losses: Mapping[str, float],
    eta: float | None = None,
) -> TrustTable:
    """Multiplicative penalty then renormalization; other topics untouched."""
    eta = table.eta if eta is None else eta
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie in (0, 1)")
    for e, loss in losses.items():
        if not (0.0 <= loss <= 1.0):
            raise ValueError(f"loss for {e!r} must lie in [0, 1], got {loss}")
    weights = table.ensure_topic(topic, sorted(losses))
    updated = {
        e: max(table.floor, w * (1.0 - eta * losses.get(e, 0.0))) for e, w in weights.items()
    }
    total = sum(updated.values())
    table.topics[topic] = {e: w / total for e, w in updated.items()}
    return table


def to_json_dict(table: TrustTable) -> dict:
    return {
        "eta": table.eta,
        "floor": table.floor,
        "topics": {t: dict(sorted(w.items())) for t, w in sorted(table.topics.items())},
    }


def from_json_dict(data: dict) -> TrustTable:
    return TrustTable(
        eta=float(data.get("eta", 0.1)),
        floor=float(data.get("floor", 1e-4)),
        topics={t: {e: float(v) for e, v in w.items()} for t, w in data.get("topics", {}).items()},
    )


def save_trust(table: TrustTable, path: str | Path) -> None:
    """Serialize via a temp file + atomic rename so readers never see a torn file."""
    path = Path(path)
    payload = json.dumps(to_json_dict(table), indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_trust(path: str | Path) -> TrustTable:
    return from_json_dict(json.loads(Path(path).read_text()))
