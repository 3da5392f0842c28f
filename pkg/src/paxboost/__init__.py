"""Federated gradient-boosted trees over party-adaptive surrogate histograms."""

from .config import LossKind, TrainingConfig
from .data import Dataset, load_csv, make_synthetic, partition_schedule, sample_split
from .errors import PaxError
from .gbt import Ensemble, Node, Tree, find_best_split, grad_hess, grow_tree, leaf_weight, split_gain
from .histogram import (
    SurrogateHistogram,
    bucket_grad_hess,
    compute_histogram,
    merge_hist,
    n_bins_for,
    select_merge_epsilon,
)
from .metrics import classification_metrics, rmse, roc_auc
from .protocol import compute_local_epsilon, run_round, run_training
from .sketch import QuantileSketch, extract_bins, merge_sketches, sketch_insert, sketch_query

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Ensemble",
    "LossKind",
    "Node",
    "PaxError",
    "QuantileSketch",
    "SurrogateHistogram",
    "TrainingConfig",
    "Tree",
    "bucket_grad_hess",
    "classification_metrics",
    "compute_histogram",
    "compute_local_epsilon",
    "extract_bins",
    "find_best_split",
    "grad_hess",
    "grow_tree",
    "leaf_weight",
    "load_csv",
    "make_synthetic",
    "merge_hist",
    "merge_sketches",
    "n_bins_for",
    "partition_schedule",
    "rmse",
    "roc_auc",
    "run_round",
    "run_training",
    "sample_split",
    "select_merge_epsilon",
    "sketch_insert",
    "sketch_query",
    "split_gain",
]
