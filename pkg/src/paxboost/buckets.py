"""Per-bin gradient/hessian sums and the per-sample binned view used to grow trees."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .wire import decode_array, encode_array

MISSING_CODE = -1


@dataclass
class GradHessBuckets:
    """Per-feature, per-bin sums of g, h and sample counts.

    ``grad[f][k]`` is the summed gradient of samples whose feature ``f`` falls
    in bin ``k``; samples missing feature ``f`` land in ``missing_*[f]``.
    """

    grad: list[np.ndarray]
    hess: list[np.ndarray]
    count: list[np.ndarray]
    missing_grad: np.ndarray
    missing_hess: np.ndarray
    missing_count: np.ndarray
    source: str = "merged"

    def __post_init__(self):
        m = len(self.grad)
        if m == 0:
            raise StructuralError("buckets must cover at least one feature")
        if not (len(self.hess) == len(self.count) == m):
            raise StructuralError("grad/hess/count feature counts differ")
        for f in range(m):
            if len(self.grad[f]) == 0:
                raise StructuralError(f"feature {f} has no bins")
            if not (len(self.grad[f]) == len(self.hess[f]) == len(self.count[f])):
                raise StructuralError(f"feature {f} bin arrays differ in length")
        self.missing_grad = np.asarray(self.missing_grad, dtype=np.float64)
        self.missing_hess = np.asarray(self.missing_hess, dtype=np.float64)
        self.missing_count = np.asarray(self.missing_count, dtype=np.int64)

    @property
    def n_features(self) -> int:
        return len(self.grad)

    def n_bins(self, feature: int) -> int:
        return len(self.grad[feature])

    def totals(self, feature: int = 0) -> tuple[float, float, int]:
        """(G, H, count) over every bin of ``feature`` plus its missing bucket."""
        return (
            float(self.grad[feature].sum() + self.missing_grad[feature]),
            float(self.hess[feature].sum() + self.missing_hess[feature]),
            int(self.count[feature].sum() + self.missing_count[feature]),
        )

    @classmethod
    def zeros(cls, bins_per_feature, source="merged") -> "GradHessBuckets":
        m = len(bins_per_feature)
        return cls(
            grad=[np.zeros(b) for b in bins_per_feature],
            hess=[np.zeros(b) for b in bins_per_feature],
            count=[np.zeros(b, dtype=np.int64) for b in bins_per_feature],
            missing_grad=np.zeros(m),
            missing_hess=np.zeros(m),
            missing_count=np.zeros(m, dtype=np.int64),
            source=source,
        )

    def to_payload(self) -> dict:
        return {
            "source": self.source,
            "features": [
                {
                    "G": encode_array(self.grad[f]),
                    "H": encode_array(self.hess[f]),
                    "count": encode_array(self.count[f], "<i8"),
                    "missing": [
                        float(self.missing_grad[f]),
                        float(self.missing_hess[f]),
                        int(self.missing_count[f]),
                    ],
                }
                for f in range(self.n_features)
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "GradHessBuckets":
        feats = payload["features"]
        return cls(
            grad=[decode_array(f["G"]).astype(np.float64) for f in feats],
            hess=[decode_array(f["H"]).astype(np.float64) for f in feats],
            count=[decode_array(f["count"]).astype(np.int64) for f in feats],
            missing_grad=[f["missing"][0] for f in feats],
            missing_hess=[f["missing"][1] for f in feats],
            missing_count=[f["missing"][2] for f in feats],
            source=payload.get("source", "merged"),
        )


@dataclass
class BinnedGradients:
    """Samples expressed as bin codes plus their per-sample g and h.

    ``codes[i, f]`` is the bin of sample ``i`` on feature ``f`` or
    ``MISSING_CODE``. ``thresholds[f][k]`` is the upper edge of bin ``k``;
    a split after bin ``k`` sends ``x <= thresholds[f][k]`` left.
    """

    codes: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    thresholds: list[np.ndarray]
    _flat: np.ndarray = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.grad = np.asarray(self.grad, dtype=np.float64)
        self.hess = np.asarray(self.hess, dtype=np.float64)
        if self.codes.ndim != 2:
            raise StructuralError("codes must be a 2-d array")
        n, m = self.codes.shape
        if m != len(self.thresholds) or m == 0:
            raise StructuralError("codes and thresholds disagree on feature count")
        if self.grad.shape != (n,) or self.hess.shape != (n,):
            raise StructuralError("grad/hess must have one entry per sample")
        nb = np.array([len(t) for t in self.thresholds], dtype=np.int64)
        if np.any(nb == 0):
            raise StructuralError("every feature needs at least one bin")
        if n and (np.any(self.codes >= nb[None, :]) or np.any(self.codes < MISSING_CODE)):
            raise StructuralError("bin code out of range")
        # Each feature owns nb[f] + 1 slots; the last one is its missing bucket.
        self._offsets = np.concatenate([[0], np.cumsum(nb + 1)[:-1]])
        slot = np.where(self.codes == MISSING_CODE, nb[None, :], self.codes)
        self._flat = slot + self._offsets[None, :]

    @property
    def n_samples(self) -> int:
        return self.codes.shape[0]

    @property
    def n_features(self) -> int:
        return self.codes.shape[1]

    def buckets(self, rows: np.ndarray | None = None) -> GradHessBuckets:
        """Histogram the selected rows (all rows when ``rows`` is None)."""
        flat = self._flat if rows is None else self._flat[rows]
        g = self.grad if rows is None else self.grad[rows]
        h = self.hess if rows is None else self.hess[rows]
        m = self.n_features
        size = int(self._offsets[-1] + len(self.thresholds[-1]) + 1)
        idx = flat.ravel()
        sg = np.bincount(idx, weights=np.repeat(g, m), minlength=size)
        sh = np.bincount(idx, weights=np.repeat(h, m), minlength=size)
        sc = np.bincount(idx, minlength=size)
        grad, hess, count = [], [], []
        mg, mh, mc = np.empty(m), np.empty(m), np.empty(m, dtype=np.int64)
        for f in range(m):
            lo = self._offsets[f]
            hi = lo + len(self.thresholds[f])
            grad.append(sg[lo:hi])
            hess.append(sh[lo:hi])
            count.append(sc[lo:hi])
            mg[f], mh[f], mc[f] = sg[hi], sh[hi], sc[hi]
        return GradHessBuckets(grad, hess, count, mg, mh, mc, source="merged")
