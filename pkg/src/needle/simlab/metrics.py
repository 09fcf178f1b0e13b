"""Ranking quality metrics: average precision and hit rate."""
from __future__ import annotations

from typing import Sequence

from ..errors import ValidationError


def average_precision(relevant_flags: Sequence[bool], total_relevant: int) -> float:
    """Mean of the precision values at each retrieved relevant position.

    ``total_relevant`` is the number of relevant items in the whole corpus;
    relevant items never retrieved contribute zero, so a perfect front-loaded
    ranking scores 1 and an empty hit list scores 0.
    """
    if total_relevant < 1:
        raise ValidationError("total_relevant must be >= 1")
    hits = sum(1 for f in relevant_flags if f)
    if hits > total_relevant:
        raise ValidationError(
            f"ranking marks {hits} relevant results but corpus only has {total_relevant}"
        )
    acc = 0.0
    seen = 0
    for pos, flag in enumerate(relevant_flags, start=1):
        if flag:
            seen += 1
            acc += seen / pos
    return acc / total_relevant


def hit_rate(ranked_ids: Sequence[int], target_id: int) -> int:
    """1 when the target appears anywhere in the ranking, else 0."""
    return int(target_id in set(ranked_ids))


def mean_average_precision(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def mean_hit_rate(values: Sequence[int]) -> float:
    return sum(values) / len(values) if values else 0.0
