"""Automated toy metrics, guidance sweeps and human-rating aggregation."""

from .human import (
    RaterResponse,
    aggregate_report,
    alignment_aggregate,
    filter_raters,
    pairwise_aggregate,
    preference_rate,
    read_ratings,
)
from .metrics import GaussianFit, alignment_score, feature_dim, fid_toy, fit_gaussian, frechet_distance, image_features
from .sweep import DEFAULT_WEIGHTS, SweepRow, cascade_generator, guidance_sweep, model_generator, sweep_csv

__all__ = [
    "DEFAULT_WEIGHTS", "GaussianFit", "RaterResponse", "SweepRow", "aggregate_report", "alignment_aggregate",
    "alignment_score", "cascade_generator", "feature_dim", "fid_toy", "filter_raters", "fit_gaussian",
    "frechet_distance", "guidance_sweep", "image_features", "model_generator", "pairwise_aggregate",
    "preference_rate", "read_ratings", "sweep_csv",
]
