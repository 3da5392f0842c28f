"""Package-side glue shared by several test modules."""

from __future__ import annotations

import numpy as np

from paxboost.buckets import BinnedGradients
from paxboost.data import Dataset
from paxboost.histogram import compute_histogram


def exact_binned(X, g, h) -> BinnedGradients:
    """Per-sample bin codes where every distinct value has its own bin."""
    X = np.asarray(X, dtype=float)
    distinct = max(len(np.unique(c[~np.isnan(c)])) for c in X.T)
    hist = compute_histogram(X, 1.0 / max(distinct, 1))
    return BinnedGradients(hist.codes(X), g, h, hist.thresholds)


def discrete_classification(seed: int, n: int = 200, m: int = 4, levels: int = 25,
                            missing: float = 0.05) -> Dataset:
    """Integer-valued features (few distinct values) with a noisy linear label."""
    rng = np.random.default_rng(seed)
    X = rng.integers(0, levels, size=(n, m)).astype(float)
    X[rng.random(X.shape) < missing] = np.nan
    z = (np.nan_to_num(X[:, 0] - levels / 2) / 6
         - np.nan_to_num(X[:, 1 % m] - levels / 2) / 8
         + rng.normal(0, 1, n))
    return Dataset(X, (z > 0).astype(float))
