"""Surrogate histograms, per-bin g/h bucketing and aggregator-side fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .buckets import MISSING_CODE, BinnedGradients, GradHessBuckets
from .config import LossKind
from .errors import EmptySketchError, ProtocolError, StructuralError
from .gbt import Ensemble, grad_hess
from .sketch import BinEdges, QuantileSketch, merge_sketches
from .wire import decode_array, encode_array

SCHEMA_VERSION = 1

# Party sketches run at epsilon / SKETCH_REFINE. Bin targets are spaced
# epsilon * n ranks apart, so a query error below half that spacing keeps
# every target on a distinct boundary.
SKETCH_REFINE = 4


def n_bins_for(epsilon: float) -> int:
    """max(1, floor(1/epsilon)), robust to 1/epsilon landing a hair under an integer."""
    inv = 1.0 / epsilon
    return max(1, math.floor(inv * (1.0 + 1e-12)))


@dataclass
class FeatureHistogram:
    edges: BinEdges
    representatives: np.ndarray
    counts: np.ndarray
    missing_count: int
    sketch: QuantileSketch

    @property
    def n_bins(self) -> int:
        return self.edges.n_bins

    def codes(self, column: np.ndarray) -> np.ndarray:
        out = np.full(column.shape[0], MISSING_CODE, dtype=np.int64)
        ok = ~np.isnan(column)
        out[ok] = self.edges.locate(column[ok])
        return out

    def to_payload(self) -> dict:
        return {
            "lo": self.edges.lo,
            "upper": encode_array(self.edges.upper),
            "representatives": encode_array(self.representatives),
            "counts": encode_array(self.counts, "<i8"),
            "missing_count": int(self.missing_count),
            "sketch": self.sketch.to_payload(),
        }

    @classmethod
    def from_payload(cls, d: dict) -> "FeatureHistogram":
        return cls(
            edges=BinEdges(float(d["lo"]), decode_array(d["upper"]).astype(np.float64)),
            representatives=decode_array(d["representatives"]).astype(np.float64),
            counts=decode_array(d["counts"]).astype(np.int64),
            missing_count=int(d["missing_count"]),
            sketch=QuantileSketch.from_payload(d["sketch"]),
        )


@dataclass
class SurrogateHistogram:
    """A party's binned stand-in for its feature distribution."""

    features: list[FeatureHistogram]
    epsilon: float
    n_samples: int

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def thresholds(self) -> list[np.ndarray]:
        return [fh.edges.upper for fh in self.features]

    def codes(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise StructuralError("data does not match the histogram's feature schema")
        return np.column_stack([fh.codes(X[:, f]) for f, fh in enumerate(self.features)])

    def quantize(self, X: np.ndarray) -> np.ndarray:
        """Replace each present value by its bin representative."""
        codes = self.codes(X)
        out = np.full(codes.shape, np.nan)
        for f, fh in enumerate(self.features):
            ok = codes[:, f] != MISSING_CODE
            out[ok, f] = fh.representatives[codes[ok, f]]
        return out

    def to_payload(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "epsilon": self.epsilon,
            "n_samples": self.n_samples,
            "features": [fh.to_payload() for fh in self.features],
        }

    @classmethod
    def from_payload(cls, d: dict) -> "SurrogateHistogram":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ProtocolError(f"unsupported histogram schema {d.get('schema_version')!r}")
        return cls(
            features=[FeatureHistogram.from_payload(f) for f in d["features"]],
            epsilon=float(d["epsilon"]),
            n_samples=int(d["n_samples"]),
        )


_EMPTY_EDGES = BinEdges(0.0, np.zeros(1))


def _feature_histogram(column: np.ndarray, epsilon: float, n_bins: int) -> FeatureHistogram:
    present = column[~np.isnan(column)]
    sketch = QuantileSketch(epsilon / SKETCH_REFINE).extend(present)
    edges = sketch.extract_bins(n_bins) if present.size else _EMPTY_EDGES
    counts = np.bincount(edges.locate(present), minlength=edges.n_bins) if present.size \
        else np.zeros(1, dtype=np.int64)
    return FeatureHistogram(
        edges=edges,
        representatives=edges.midpoints(),
        counts=counts.astype(np.int64),
        missing_count=int(column.size - present.size),
        sketch=sketch,
    )


def compute_histogram(local_data, epsilon_i: float) -> SurrogateHistogram:
    """Build a party's surrogate histogram at resolution ``epsilon_i``.

    ``local_data`` is a Dataset or a 2-d feature matrix with NaN for missing.
    """
    X = np.asarray(getattr(local_data, "X", local_data), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySketchError("cannot build a histogram from an empty dataset")
    if not 0.0 < epsilon_i <= 1.0:
        raise ValueError("epsilon_i must lie in (0, 1]")
    nb = n_bins_for(epsilon_i)
    feats = [_feature_histogram(X[:, f], epsilon_i, nb) for f in range(X.shape[1])]
    return SurrogateHistogram(feats, float(epsilon_i), X.shape[0])


def local_grad_hess(hist: SurrogateHistogram, X, y, model: Ensemble, quantize: bool = True):
    """Per-sample (g, h) of ``model`` on a party's data."""
    Xq = hist.quantize(X) if quantize else np.asarray(X, dtype=np.float64)
    return grad_hess(model.loss, y, model.predict_raw(Xq))


def bucketize(hist: SurrogateHistogram, codes: np.ndarray, g, h, source: str = "party") -> GradHessBuckets:
    bk = BinnedGradients(codes, g, h, hist.thresholds).buckets()
    bk.source = source
    return bk


def bucket_grad_hess(hist: SurrogateHistogram, local_data, model: Ensemble,
                     quantize: bool = True, source: str = "party") -> GradHessBuckets:
    X = np.asarray(local_data.X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != hist.n_features:
        raise StructuralError("data does not match the histogram's feature schema")
    g, h = local_grad_hess(hist, X, local_data.y, model, quantize)
    return bucketize(hist, hist.codes(X), g, h, source)


def select_merge_epsilon(party_epsilons: Sequence[float], loss: LossKind) -> float:
    """Fusion resolution: finest party epsilon for classification, coarsest for regression."""
    eps = list(party_epsilons)
    if not eps:
        raise ProtocolError("no party epsilons to select from")
    return min(eps) if LossKind.parse(loss).is_classification else max(eps)


@dataclass
class MergedHistograms:
    hist: SurrogateHistogram
    bin_maps: list[list[np.ndarray]]  # bin_maps[party][feature][party_bin] -> merged bin


@dataclass
class MergeResult:
    hist: SurrogateHistogram
    buckets: GradHessBuckets
    bin_maps: list[list[np.ndarray]]

    def __iter__(self):
        # unpacks as (hist, buckets)
        return iter((self.hist, self.buckets))


def merge_histograms(party_hists: Sequence[SurrogateHistogram], epsilon_m: float) -> MergedHistograms:
    """Re-bin all parties onto one global grid at resolution ``epsilon_m``.

    Each party bin maps wholly to the merged bin containing its representative.
    """
    if not party_hists:
        raise ProtocolError("no party histograms to merge")
    m = party_hists[0].n_features
    if any(h.n_features != m for h in party_hists):
        raise ProtocolError("parties disagree on feature schema")
    nb = n_bins_for(epsilon_m)
    feats: list[FeatureHistogram] = []
    maps: list[list[np.ndarray]] = [[] for _ in party_hists]
    for f in range(m):
        sketches = [h.features[f].sketch for h in party_hists]
        try:
            merged = merge_sketches(sketches)
            edges = merged.extract_bins(nb)
        except EmptySketchError:
            merged = QuantileSketch(max(s.epsilon for s in sketches))
            edges = _EMPTY_EDGES
        counts = np.zeros(edges.n_bins, dtype=np.int64)
        missing = 0
        for p, h in enumerate(party_hists):
            fh = h.features[f]
            mp = edges.locate(fh.representatives)
            maps[p].append(mp)
            np.add.at(counts, mp, fh.counts)
            missing += fh.missing_count
        feats.append(FeatureHistogram(edges, edges.midpoints(), counts, missing, merged))
    total = sum(h.n_samples for h in party_hists)
    return MergedHistograms(SurrogateHistogram(feats, float(epsilon_m), total), maps)


def fuse_buckets(party_buckets: Sequence[GradHessBuckets], merged: MergedHistograms) -> GradHessBuckets:
    """Sum party bucket mass into the merged grid, in roster order."""
    if len(party_buckets) != len(merged.bin_maps):
        raise ProtocolError("bucket list and histogram list differ in length")
    out = GradHessBuckets.zeros([fh.n_bins for fh in merged.hist.features], source="merged")
    for p, bk in enumerate(party_buckets):
        if bk.n_features != merged.hist.n_features:
            raise ProtocolError("party buckets disagree on feature schema")
        for f in range(bk.n_features):
            mp = merged.bin_maps[p][f]
            if len(mp) != bk.n_bins(f):
                raise ProtocolError(f"party {p} feature {f}: bucket/histogram bin mismatch")
            np.add.at(out.grad[f], mp, bk.grad[f])
            np.add.at(out.hess[f], mp, bk.hess[f])
            np.add.at(out.count[f], mp, bk.count[f])
        out.missing_grad += bk.missing_grad
        out.missing_hess += bk.missing_hess
        out.missing_count += bk.missing_count
    return out


def merge_hist(party_buckets: Sequence[GradHessBuckets], party_hists: Sequence[SurrogateHistogram],
               epsilon_m: float) -> MergeResult:
    merged = merge_histograms(party_hists, epsilon_m)
    return MergeResult(merged.hist, fuse_buckets(party_buckets, merged), merged.bin_maps)


def remap_codes(codes: np.ndarray, bin_map: list[np.ndarray]) -> np.ndarray:
    """Translate a party's per-sample bin codes onto the merged grid."""
    out = np.full(codes.shape, MISSING_CODE, dtype=np.int64)
    for f, mp in enumerate(bin_map):
        ok = codes[:, f] != MISSING_CODE
        out[ok, f] = mp[codes[ok, f]]
    return out
