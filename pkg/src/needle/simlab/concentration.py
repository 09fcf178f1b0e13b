"""Empirical check of the multiplicative concentration bound for the
mean-distance estimator.

Each trial draws m i.i.d. samples with mean ``delta_true`` (by default
Bernoulli, the regime the exponential bound presumes), averages them, and
counts a deviation whenever the ratio to the true mean leaves
[1 - gamma, 1 + gamma]. The report pairs the observed deviation frequency
with the analytic bound exp(-m g^2 d / 3) + exp(-m g^2 d / 2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class ConcentrationReport:
    m: int
    gamma: float
    delta_true: float
    trials: int
    empirical_prob: float
    chernoff_bound: float

    def binomial_sigma(self) -> float:
        """Standard error of the empirical frequency at the bound's scale."""
        p = min(max(self.empirical_prob, 1.0 / self.trials), 1.0)
        return math.sqrt(p * (1.0 - p) / self.trials)

    def csv_row(self) -> str:
        return (
            f"{self.m},{self.gamma},{self.delta_true},{self.trials},"
            f"{self.empirical_prob},{self.chernoff_bound}"
        )


CSV_HEADER = "m,gamma,delta,trials,empirical_prob,bound"


def chernoff_bound(m: int, gamma: float, delta: float) -> float:
    return math.exp(-m * gamma**2 * delta / 3.0) + math.exp(-m * gamma**2 * delta / 2.0)


def bernoulli_sampler(delta: float) -> Sampler:
    def sample(rng: np.random.Generator, m: int) -> np.ndarray:
        return (rng.random(m) < delta).astype(np.float64)

    return sample


def concentration_trial(
    m: int,
    gamma: float,
    delta_true: float,
    trials: int,
    sampler: Sampler | None = None,
    seed: int = 0,
) -> ConcentrationReport:
    """Run independent trials and report the deviation frequency vs the bound.

    Trials are independently seeded (base seed + trial index) so a run can be
    reproduced or parallelized without changing its outcome.
    """
    if not (0.0 < delta_true <= 2.0):
        raise ValueError("delta_true must lie in (0, 2]")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    if trials < 100:
        raise ValueError(f"{trials} trials lack statistical power; use at least 100")
    sampler = sampler or bernoulli_sampler(delta_true)
    hi = (1.0 + gamma) * delta_true
    lo = (1.0 - gamma) * delta_true
    deviations = 0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        mean = float(sampler(rng, m).mean())
        if mean >= hi or mean <= lo:
            deviations += 1
    return ConcentrationReport(
        m=m,
        gamma=gamma,
        delta_true=delta_true,
        trials=trials,
        empirical_prob=deviations / trials,
        chernoff_bound=chernoff_bound(m, gamma, delta_true),
    )
