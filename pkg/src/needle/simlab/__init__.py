"""Synthetic-world test bed: ground-truth semantics, mock adapters, and the
statistical harness that checks the retrieval estimator's concentration."""

from .world import SyntheticWorld, WorldItem, NoiseModel, make_world, export_dataset
from .concentration import ConcentrationReport, chernoff_bound, concentration_trial
from .metrics import average_precision, hit_rate, mean_average_precision, mean_hit_rate

__all__ = [
    "SyntheticWorld",
    "WorldItem",
    "NoiseModel",
    "make_world",
    "export_dataset",
    "ConcentrationReport",
    "chernoff_bound",
    "concentration_trial",
    "average_precision",
    "hit_rate",
    "mean_average_precision",
    "mean_hit_rate",
]
