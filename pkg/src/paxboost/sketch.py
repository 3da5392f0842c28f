"""Greenwald-Khanna quantile summaries.

A summary is a sorted list of tuples ``(v, g, delta)``. With
``rmin_i = g_1 + ... + g_i`` and ``rmax_i = rmin_i + delta_i`` the true rank
of ``v_i`` lies in ``[rmin_i, rmax_i]``. Keeping ``g_i + delta_i <=
floor(2 * eps * n)`` for every tuple guarantees that a phi-quantile query
returns a value whose rank is within ``eps * n`` of ``phi * n``.

Inserts are buffered and folded in as a sorted batch. Each new value gets
``(1, g_s + delta_s - 1)`` from its successor ``s`` (or ``delta = 0`` beyond
either end), which keeps the invariant exactly as single inserts would.

Merging interleaves the tuple lists and recomputes each tuple's rank bounds
against the other summary, so a merged tuple obeys ``g + delta <=
2 * (eps_a * n_a + eps_b * n_b) <= 2 * max(eps) * n``. The merge therefore
adds no rank error beyond the largest input epsilon
(``MERGE_SLACK = 0``); compressing the result at a coarser epsilon raises
the bound to that epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySketchError, SketchInputError

MERGE_SLACK = 0.0


@dataclass
class BinEdges:
    """Histogram bins derived from a sketch.

    Bin 0 is ``[lo, upper[0]]``; bin ``k > 0`` is ``(upper[k-1], upper[k]]``.
    """

    lo: float
    upper: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.upper)

    @property
    def boundaries(self) -> np.ndarray:
        """Strictly increasing fences: the minimum plus every upper edge."""
        return np.unique(np.concatenate([[self.lo], self.upper]))

    def lower(self) -> np.ndarray:
        return np.concatenate([[self.lo], self.upper[:-1]])

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lower() + self.upper)

    def locate(self, values: np.ndarray) -> np.ndarray:
        """Bin index of each finite value (values outside the fences are clipped)."""
        idx = np.searchsorted(self.upper, values, side="left")
        return np.minimum(idx, self.n_bins - 1)


@dataclass
class QuantileSketch:
    epsilon: float
    values: list[float] = field(default_factory=list)
    g: list[int] = field(default_factory=list)
    delta: list[int] = field(default_factory=list)
    count: int = 0
    _buffer: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise SketchInputError("epsilon must lie in (0, 1]")

    @property
    def _batch_size(self) -> int:
        return max(64, int(1.0 / (2.0 * self.epsilon)))

    @property
    def entries(self) -> list[tuple[float, int, int]]:
        self.flush()
        return list(zip(self.values, self.g, self.delta))

    def __len__(self) -> int:
        self.flush()
        return len(self.values)

    # -- insertion -------------------------------------------------------

    def insert(self, value: float) -> "QuantileSketch":
        value = float(value)
        if not math.isfinite(value):
            raise SketchInputError(f"cannot insert non-finite value {value!r}")
        self._buffer.append(value)
        self.count += 1
        if len(self._buffer) >= self._batch_size:
            self.flush()
        return self

    def extend(self, values: Iterable[float]) -> "QuantileSketch":
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64).ravel()
        if not np.all(np.isfinite(arr)):
            raise SketchInputError("cannot insert non-finite values")
        step = self._batch_size
        for start in range(0, arr.size, step):
            chunk = arr[start:start + step]
            self._buffer.extend(chunk.tolist())
            self.count += chunk.size
            self.flush()
        return self

    def flush(self) -> None:
        if not self._buffer:
            return
        batch = np.sort(np.asarray(self._buffer, dtype=np.float64))
        self._buffer = []
        n_old = len(self.values)
        if n_old == 0:
            new_v, new_g, new_d = batch, np.ones(batch.size, np.int64), np.zeros(batch.size, np.int64)
        else:
            old_v = np.asarray(self.values)
            old_g = np.asarray(self.g, dtype=np.int64)
            old_d = np.asarray(self.delta, dtype=np.int64)
            pos = np.searchsorted(old_v, batch, side="left")
            succ = np.minimum(pos, n_old - 1)
            d = old_g[succ] + old_d[succ] - 1
            d[(pos == 0) | (pos == n_old)] = 0
            new_v = np.insert(old_v, pos, batch)
            new_g = np.insert(old_g, pos, 1)
            new_d = np.insert(old_d, pos, d)
        self.values, self.g, self.delta = new_v.tolist(), new_g.tolist(), new_d.tolist()
        self._compress(self.epsilon)

    def _compress(self, epsilon: float) -> None:
        """Fold tuple i into i+1 while the band invariant allows it.

        The first and last tuples (exact min and max) are never removed.
        While the summary holds no more than ``1 / epsilon`` distinct values
        only equal-valued tuples are folded, so low-cardinality columns keep
        every value they contain.
        """
        cap = math.floor(2.0 * epsilon * self.count)
        if cap < 2 or len(self.values) < 3:
            return
        v, g, d = self.values, self.g, self.delta
        keep_distinct = len(set(v)) <= math.floor((1.0 / epsilon) * (1.0 + 1e-12))
        out_v, out_g, out_d = [v[-1]], [g[-1]], [d[-1]]
        for i in range(len(v) - 2, 0, -1):
            if g[i] + out_g[-1] + out_d[-1] <= cap and (not keep_distinct or v[i] == out_v[-1]):
                out_g[-1] += g[i]
            else:
                out_v.append(v[i])
                out_g.append(g[i])
                out_d.append(d[i])
        out_v.append(v[0])
        out_g.append(g[0])
        out_d.append(d[0])
        self.values, self.g, self.delta = out_v[::-1], out_g[::-1], out_d[::-1]

    # -- queries ---------------------------------------------------------

    def _rank_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self.flush()
        if self.count == 0:
            raise EmptySketchError("sketch is empty")
        v = np.asarray(self.values)
        rmin = np.cumsum(np.asarray(self.g, dtype=np.int64))
        rmax = rmin + np.asarray(self.delta, dtype=np.int64)
        # A later tuple's rmax also bounds every earlier value's rank.
        rmax = np.minimum.accumulate(rmax[::-1])[::-1]
        return v, rmin, rmax

    @property
    def min(self) -> float:
        self.flush()
        if self.count == 0:
            raise EmptySketchError("sketch is empty")
        return self.values[0]

    @property
    def max(self) -> float:
        self.flush()
        if self.count == 0:
            raise EmptySketchError("sketch is empty")
        return self.values[-1]

    def query_many(self, phis: Sequence[float]) -> np.ndarray:
        v, rmin, rmax = self._rank_bounds()
        phis = np.asarray(phis, dtype=np.float64)
        if np.any((phis < 0) | (phis > 1)):
            raise SketchInputError("phi must lie in [0, 1]")
        r = np.clip(phis * self.count, 1.0, float(self.count))
        # cost_i = max(r - rmin_i, rmax_i - r) is unimodal in i; the minimum
        # sits where rmin_i + rmax_i first reaches 2r.
        mid = rmin + rmax
        hi = np.searchsorted(mid, 2.0 * r, side="left")
        hi = np.clip(hi, 0, len(v) - 1)
        lo = np.clip(hi - 1, 0, len(v) - 1)
        cost_hi = np.maximum(r - rmin[hi], rmax[hi] - r)
        cost_lo = np.maximum(r - rmin[lo], rmax[lo] - r)
        pick = np.where(cost_lo <= cost_hi, lo, hi)
        return v[pick]

    def query(self, phi: float) -> float:
        return float(self.query_many([phi])[0])

    def extract_bins(self, n_bins: int) -> BinEdges:
        """Quantile bins at phi = k / n_bins.

        When the summary holds no more distinct values than ``n_bins``, every
        distinct value gets its own bin.
        """
        if n_bins < 1:
            raise SketchInputError("n_bins must be >= 1")
        v, _, _ = self._rank_bounds()
        distinct = np.unique(v)
        if distinct.size <= n_bins:
            upper = distinct
        else:
            phis = np.arange(1, n_bins + 1) / n_bins
            upper = np.unique(self.query_many(phis))
            if upper[-1] != v[-1]:
                upper = np.append(upper, v[-1])
        return BinEdges(lo=float(v[0]), upper=upper)

    # -- serialization ---------------------------------------------------

    def to_payload(self) -> dict:
        self.flush()
        return {
            "epsilon": self.epsilon,
            "count": self.count,
            "entries": [[v, g, d] for v, g, d in zip(self.values, self.g, self.delta)],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "QuantileSketch":
        ents = payload["entries"]
        return cls(
            epsilon=float(payload["epsilon"]),
            values=[float(e[0]) for e in ents],
            g=[int(e[1]) for e in ents],
            delta=[int(e[2]) for e in ents],
            count=int(payload["count"]),
        )


def sketch_insert(sk: QuantileSketch, value: float) -> QuantileSketch:
    return sk.insert(value)


def sketch_query(sk: QuantileSketch, phi: float) -> float:
    return sk.query(phi)


def extract_bins(sk: QuantileSketch, n_bins: int) -> BinEdges:
    return sk.extract_bins(n_bins)


def _merge_two(a: QuantileSketch, b: QuantileSketch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interleave two flushed, nonempty summaries; returns (values, rmin, rmax)."""
    av, bv = np.asarray(a.values), np.asarray(b.values)
    a_rmin = np.cumsum(np.asarray(a.g, dtype=np.int64))
    b_rmin = np.cumsum(np.asarray(b.g, dtype=np.int64))
    a_rmax = a_rmin + np.asarray(a.delta, dtype=np.int64)
    b_rmax = b_rmin + np.asarray(b.delta, dtype=np.int64)

    # Ties order a-tuples before b-tuples.
    # For a-tuples: b-predecessor has value < v, b-successor value >= v.
    pa = np.searchsorted(bv, av, side="left")
    a_lo = np.where(pa > 0, b_rmin[np.maximum(pa - 1, 0)], 0)
    a_hi = np.where(pa < len(bv), b_rmax[np.minimum(pa, len(bv) - 1)] - 1, b.count)
    # For b-tuples: a-predecessor has value <= v, a-successor value > v.
    pb = np.searchsorted(av, bv, side="right")
    b_lo = np.where(pb > 0, a_rmin[np.maximum(pb - 1, 0)], 0)
    b_hi = np.where(pb < len(av), a_rmax[np.minimum(pb, len(av) - 1)] - 1, a.count)

    values = np.concatenate([av, bv])
    rmin = np.concatenate([a_rmin + a_lo, b_rmin + b_lo])
    rmax = np.concatenate([a_rmax + a_hi, b_rmax + b_hi])
    source = np.concatenate([np.zeros(len(av), np.int8), np.ones(len(bv), np.int8)])
    order = np.lexsort((source, values))
    return values[order], rmin[order], rmax[order]


def merge_sketches(
    sketches: Sequence[QuantileSketch], epsilon: float | None = None
) -> QuantileSketch:
    """Merge summaries of the same feature.

    The result carries ``max(input epsilons, epsilon)`` and is compressed at
    that value. Empty inputs are ignored.
    """
    live = [s for s in sketches if s.count > 0]
    if not live:
        raise EmptySketchError("cannot merge only empty sketches")
    for s in live:
        s.flush()
    eps = max(s.epsilon for s in live)
    if epsilon is not None:
        eps = max(eps, float(epsilon))
    acc = QuantileSketch(eps, list(live[0].values), list(live[0].g), list(live[0].delta), live[0].count)
    for other in live[1:]:
        values, rmin, rmax = _merge_two(acc, other)
        g = np.diff(np.concatenate([[0], rmin]))
        acc = QuantileSketch(eps, values.tolist(), g.tolist(), (rmax - rmin).tolist(),
                             acc.count + other.count)
    acc._compress(eps)
    return acc
