"""Dataset ingestion, train/test sampling and party re-partitioning."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import IngestionError, PartitionError, SamplingError

DEFAULT_MISSING_TOKENS = ("", "NA")


@dataclass
class Dataset:
    """Feature matrix (NaN marks a missing value) with one label per row."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    seed: Optional[int] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise IngestionError("feature matrix must be 2-d")
        if self.X.shape[0] != self.y.shape[0]:
            raise IngestionError("feature rows and labels differ in length")
        if not np.all(np.isfinite(self.y)):
            raise IngestionError("labels must be finite")
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(self.X.shape[1])]
        if len(self.feature_names) != self.X.shape[1]:
            raise IngestionError("feature_names length does not match the matrix")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n_samples

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], list(self.feature_names), self.seed)


def load_csv(path, label_column: str, missing_token: "str | Iterable[str]" = DEFAULT_MISSING_TOKENS) -> Dataset:
    """Read a numeric CSV with a header row.

    Cells equal to a missing token become NaN. Any other non-numeric cell
    is an error; nothing is coerced silently.
    """
    tokens = {missing_token} if isinstance(missing_token, str) else set(missing_token)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        if label_column not in header:
            raise IngestionError(f"label column {label_column!r} not found", column=label_column)
        li = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != li]
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestionError(
                    f"expected {len(header)} cells, found {len(rec)}", row=lineno
                )
            vals = []
            for ci, cell in enumerate(rec):
                cell = cell.strip()
                if cell in tokens:
                    if ci == li:
                        raise IngestionError("label is missing", row=lineno, column=header[ci])
                    v = math.nan
                else:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise IngestionError(f"cannot parse {cell!r}", row=lineno,
                                             column=header[ci]) from None
                if ci == li:
                    labels.append(v)
                else:
                    vals.append(v)
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path} has no data rows")
    return Dataset(np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
                   np.array(labels), names)


def write_csv(ds: Dataset, path, label_column: str = "label", missing_token: str = "") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [label_column])
        for row, label in zip(ds.X, ds.y):
            w.writerow([missing_token if math.isnan(v) else repr(float(v)) for v in row]
                       + [repr(float(label))])


class SampleMode(str, enum.Enum):
    RANDOM = "random"
    BALANCED = "balanced"


def sample_split(ds: Dataset, n_train: int, n_test: int, mode="random",
                 seed: Optional[int] = None) -> tuple[Dataset, Dataset]:
    """Draw disjoint train and test subsets.

    Selected rows keep their original relative order, so any ordering in
    the source (e.g. by site or time) survives into later partitioning.
    """
    mode = SampleMode(mode)
    if n_train < 0 or n_test < 0:
        raise SamplingError("sample sizes must be non-negative")
    if n_train + n_test > ds.n_samples:
        raise SamplingError(f"requested {n_train + n_test} rows from {ds.n_samples}")
    rng = np.random.default_rng(seed)
    if mode is SampleMode.RANDOM:
        perm = rng.permutation(ds.n_samples)
        train, test = perm[:n_train], perm[n_train:n_train + n_test]
    else:
        classes = np.unique(ds.y)
        if classes.size != 2:
            raise SamplingError("balanced sampling needs exactly two classes")
        pools = [rng.permutation(np.flatnonzero(ds.y == c)) for c in classes]
        want_tr = [n_train - n_train // 2, n_train // 2]
        want_te = [n_test - n_test // 2, n_test // 2]
        train_parts, test_parts = [], []
        for pool, a, b in zip(pools, want_tr, want_te):
            if pool.size < a + b:
                raise SamplingError(f"class has {pool.size} rows, needs {a + b}")
            train_parts.append(pool[:a])
            test_parts.append(pool[a:a + b])
        train, test = np.concatenate(train_parts), np.concatenate(test_parts)
    out = []
    for idx in (np.sort(train), np.sort(test)):
        sub = ds.subset(idx)
        sub.seed = seed
        out.append(sub)
    return out[0], out[1]


N_STEPS = 5
MOVE_TO_P1 = 0.5
MOVE_TO_P2 = 0.66


@dataclass
class PartitionSpec:
    """Five three-party partitions of one pooled row set.

    ``steps[s][p]`` holds the row indices owned by party ``p`` at step ``s``;
    ``moves[s]`` records the rows moved when producing step ``s`` from step
    ``s - 1`` as ``(party2_to_party1, party3_to_party2)``.
    """

    steps: list[list[np.ndarray]]
    moves: list[tuple[np.ndarray, np.ndarray]]
    seed: Optional[int]

    @property
    def counts(self) -> list[tuple[int, ...]]:
        return [tuple(len(p) for p in step) for step in self.steps]

    def manifest(self) -> list[dict]:
        return [
            {"step": s + 1, "party": p + 1, "row_indices": rows.tolist()}
            for s, step in enumerate(self.steps)
            for p, rows in enumerate(step)
        ]

    def to_json(self) -> str:
        return json.dumps(self.manifest())


def partition_schedule(pooled, seed: Optional[int] = None) -> PartitionSpec:
    """Progressively skew a pooled set across three parties.

    Step 1 splits the rows into equal contiguous thirds. Each later step
    moves ``floor(0.5 * |P2|)`` random rows from party 2 to party 1, then
    ``floor(0.66 * |P3|)`` random rows from party 3 to party 2.
    """
    n = pooled if isinstance(pooled, (int, np.integer)) else len(pooled)
    if n < 3 or n % 3:
        raise PartitionError(f"pool of {n} rows cannot be split into equal thirds")
    rng = np.random.default_rng(seed)
    third = n // 3
    parties = [np.arange(i * third, (i + 1) * third) for i in range(3)]
    steps = [[p.copy() for p in parties]]
    moves = [(np.empty(0, np.int64), np.empty(0, np.int64))]
    for _ in range(N_STEPS - 1):
        p1, p2, p3 = parties
        k12 = math.floor(MOVE_TO_P1 * len(p2))
        pick = rng.choice(len(p2), size=k12, replace=False)
        moved12 = p2[np.sort(pick)]
        p1 = np.concatenate([p1, moved12])
        p2 = np.delete(p2, pick)
        k23 = math.floor(MOVE_TO_P2 * len(p3))
        pick = rng.choice(len(p3), size=k23, replace=False)
        moved23 = p3[np.sort(pick)]
        p2 = np.concatenate([p2, moved23])
        p3 = np.delete(p3, pick)
        if min(len(p1), len(p2), len(p3)) == 0:
            raise PartitionError(f"pool of {n} rows leaves a party empty")
        parties = [p1, p2, p3]
        steps.append([p.copy() for p in parties])
        moves.append((moved12, moved23))
    return PartitionSpec(steps, moves, seed)


def split_by_counts(n: int, counts: Sequence[int]) -> list[np.ndarray]:
    """Contiguous party blocks of the given sizes."""
    if any(c < 1 for c in counts):
        raise PartitionError("every party needs at least one row")
    if sum(counts) != n:
        raise PartitionError(f"counts sum to {sum(counts)}, pool has {n} rows")
    bounds = np.cumsum([0, *counts])
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(len(counts))]


def make_synthetic(n_samples: int, n_features: int = 30, seed: Optional[int] = 0,
                   missing_rate: float = 0.03, n_sites: int = 3) -> Dataset:
    """Two-class data with skewed, heavy-tailed and missing columns.

    Rows are generated per site and emitted site by site; sites differ in
    feature location, scale and base rate, so contiguous blocks of rows are
    non-IID.
    """
    if n_features < 8:
        raise ValueError("the generator needs at least 8 features")
    rng = np.random.default_rng(seed)
    site = np.sort(rng.integers(0, n_sites, size=n_samples))
    Z = rng.standard_normal((n_samples, n_features))
    shift = (site - (n_sites - 1) / 2.0)[:, None]
    scale = 1.0 + 0.25 * site[:, None]
    Z[:, :8] = Z[:, :8] * scale[:, :1] + 0.6 * shift

    logit = (
        2.2 * Z[:, 0]
        - 1.8 * Z[:, 1]
        + 1.6 * np.tanh(2.0 * Z[:, 2])
        + 1.0 * Z[:, 3] * Z[:, 4]
        + 0.8 * np.maximum(Z[:, 5], 0.0)
        - 0.4 * shift[:, 0]
    )
    y = (rng.random(n_samples) < 1.0 / (1.0 + np.exp(-2.0 * logit))).astype(np.float64)

    X = np.empty_like(Z)
    kinds = []
    for f in range(n_features):
        kind = f % 5
        z = Z[:, f]
        if kind == 0:
            X[:, f] = z
        elif kind == 1:
            X[:, f] = np.exp(0.9 * z)  # log-normal, right skewed
        elif kind == 2:
            X[:, f] = np.sinh(1.5 * z)  # heavy tails both sides
        elif kind == 3:
            X[:, f] = np.round(20.0 * np.exp(0.5 * z))  # integer-valued counts with ties
        else:
            X[:, f] = np.sign(z) * z * z
        kinds.append(("norm", "lognorm", "sinh", "count", "sqsign")[kind])
    if missing_rate > 0:
        mask = rng.random(X.shape) < missing_rate
        mask[:, 0] = False
        X[mask] = np.nan
    names = [f"x{f}_{k}" for f, k in enumerate(kinds)]
    return Dataset(X, y, names, seed)
