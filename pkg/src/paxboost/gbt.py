"""Second-order gradient boosted trees over binned gradient statistics.

Losses, leaf weights, split gains, level-wise tree growth and ensemble
prediction. Everything here is a pure function of its inputs, so the
federated loop and a centralized run share the same math.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .buckets import MISSING_CODE, BinnedGradients, GradHessBuckets
from .config import LossKind, TrainingConfig
from .errors import DegenerateLeafError, DimensionError, LabelError, StructuralError

# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def _check_labels(loss: LossKind, y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise LabelError("labels must be finite")
    if loss is LossKind.BINARY_LOGISTIC and not np.all((y == 0) | (y == 1)):
        raise LabelError("logistic loss requires labels in {0, 1}")


def loss_value(loss: LossKind, y, raw):
    """Per-sample loss at raw score ``raw``.

    Squared error uses the 1/2 convention so that g = raw - y and h = 1.
    Logistic loss is the cross-entropy of sigmoid(raw), written as a
    softplus of the signed margin to stay accurate in the tails.
    """
    y = np.asarray(y, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if loss is LossKind.SQUARED_ERROR:
        return 0.5 * (raw - y) ** 2
    return np.logaddexp(0.0, np.where(y == 1, -raw, raw))


class GradHessPair(NamedTuple):
    g: np.ndarray
    h: np.ndarray


def grad_hess(loss: LossKind, y, raw) -> GradHessPair:
    y = np.asarray(y, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    _check_labels(loss, y)
    if loss is LossKind.SQUARED_ERROR:
        return GradHessPair(raw - y, np.ones_like(raw))
    p = sigmoid(raw)
    q = sigmoid(-raw)
    # p - 1 cancels badly for confident positives; -q is the same number.
    g = np.where(y == 1, -q, p)
    return GradHessPair(g, p * q)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    if not denom > 0:
        raise DegenerateLeafError(f"H + lambda must be positive, got {denom}")
    return -G / denom


def split_gain(GL, HL, GR, HR, reg_lambda, gamma):
    """Regularized objective reduction from splitting a node into L and R.

    Vectorized over array arguments.
    """
    GL, HL, GR, HR = (np.asarray(a, dtype=np.float64) for a in (GL, HL, GR, HR))
    gain = 0.5 * (
        GL * GL / (HL + reg_lambda)
        + GR * GR / (HR + reg_lambda)
        - (GL + GR) ** 2 / (HL + HR + reg_lambda)
    ) - gamma
    return gain if gain.ndim else float(gain)


# --------------------------------------------------------------------------
# model structures
# --------------------------------------------------------------------------


@dataclass
class Node:
    """A tree node. Internal nodes have ``left``/``right`` child ids."""

    feature: int = -1
    threshold: float = 0.0
    default_left: bool = True
    left: int = -1
    right: int = -1
    weight: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left < 0

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"kind": "leaf", "weight": self.weight}
        return {
            "kind": "split",
            "feature": self.feature,
            "threshold": self.threshold,
            "default": "left" if self.default_left else "right",
            "left": self.left,
            "right": self.right,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        if d["kind"] == "leaf":
            return cls(weight=float(d["weight"]))
        if d["kind"] != "split":
            raise StructuralError(f"unknown node kind {d['kind']!r}")
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            default_left=d["default"] == "left",
            left=int(d["left"]),
            right=int(d["right"]),
        )


@dataclass
class Tree:
    nodes: list[Node]
    root: int = 0

    @property
    def depth(self) -> int:
        best = 0
        stack = [(self.root, 0)]
        while stack:
            nid, d = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                best = max(best, d)
            else:
                stack.append((node.left, d + 1))
                stack.append((node.right, d + 1))
        return best

    @property
    def n_leaves(self) -> int:
        return sum(n.is_leaf for n in self.nodes)

    def validate(self, n_features: int | None = None) -> None:
        seen = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen or not 0 <= nid < len(self.nodes):
                raise StructuralError(f"bad or repeated node id {nid}")
            seen.add(nid)
            node = self.nodes[nid]
            if node.is_leaf:
                continue
            if node.right < 0:
                raise StructuralError("internal node needs two children")
            if n_features is not None and not 0 <= node.feature < n_features:
                raise StructuralError(f"feature index {node.feature} out of range")
            stack.extend((node.left, node.right))
        if len(seen) != len(self.nodes):
            raise StructuralError("tree has unreachable nodes")

    def _arrays(self):
        # Nodes are not mutated after growth or parsing, so compile once.
        cached = getattr(self, "_compiled", None)
        if cached is None or cached[0] != len(self.nodes):
            nodes = self.nodes
            cached = (
                len(nodes),
                np.array([max(n.feature, 0) for n in nodes], dtype=np.int64),
                np.array([n.threshold for n in nodes], dtype=np.float64),
                np.array([n.default_left for n in nodes], dtype=bool),
                np.array([n.left for n in nodes], dtype=np.int64),
                np.array([n.right for n in nodes], dtype=np.int64),
                np.array([n.weight for n in nodes], dtype=np.float64),
            )
            self._compiled = cached
        return cached[1:]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Unscaled leaf weight reached by each row of ``X`` (NaN = missing)."""
        feat, thr, dflt, left, right, weight = self._arrays()
        rows = np.arange(X.shape[0])
        nid = np.full(X.shape[0], self.root, dtype=np.int64)
        internal = left[nid] >= 0
        while np.any(internal):
            cur = nid[internal]
            x = X[rows[internal], feat[cur]]
            go_left = np.where(np.isnan(x), dflt[cur], x <= thr[cur])
            nid[internal] = np.where(go_left, left[cur], right[cur])
            internal = left[nid] >= 0
        return weight[nid]

    def to_dict(self) -> dict:
        return {"root": self.root, "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(nodes=[Node.from_dict(n) for n in d["nodes"]], root=int(d.get("root", 0)))


@dataclass
class Ensemble:
    """Additive tree model: raw score = base_score + learning_rate * sum of leaves."""

    loss: LossKind = LossKind.BINARY_LOGISTIC
    base_score: float = 0.0
    learning_rate: float = 0.3
    trees: list[Tree] = field(default_factory=list)
    n_features: Optional[int] = None

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss)

    def _as_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise DimensionError("features must be a vector or a 2-d matrix")
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise DimensionError(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        return X

    def predict_raw(self, X) -> np.ndarray:
        X = self._as_matrix(X)
        score = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(X)
        return score

    def predict(self, x) -> float:
        """Raw score for a single feature vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError("predict expects one feature vector")
        return float(self.predict_raw(x)[0])

    def predict_proba(self, X) -> np.ndarray:
        if self.loss is not LossKind.BINARY_LOGISTIC:
            raise ValueError("predict_proba is only defined for logistic loss")
        return sigmoid(self.predict_raw(X))

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.value,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        return cls(
            loss=LossKind.parse(d["loss"]),
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            n_features=d.get("n_features"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# split finding and tree growth
# --------------------------------------------------------------------------


TIE_RTOL = 1e-10


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    bin: int  # last bin index sent left
    threshold: float
    gain: float
    default_left: bool


def find_best_split(
    buckets: GradHessBuckets,
    thresholds: list[np.ndarray],
    reg_lambda: float,
    gamma: float,
    min_gain: float = 0.0,
) -> Optional[SplitCandidate]:
    """Best (feature, bin boundary) split over bucketed g/h sums.

    Candidates are boundaries between bins with non-missing samples on both
    sides. Missing-value mass is tried on each side and the better side wins
    (left on ties). Ties in gain go to the lowest feature, then the lowest
    threshold. Returns None unless the best gain exceeds ``min_gain``.
    """
    m = buckets.n_features
    if m == 0:
        raise StructuralError("no features to split on")
    if len(thresholds) != m:
        raise StructuralError("thresholds and buckets disagree on feature count")
    nb = np.array([len(g) for g in buckets.grad], dtype=np.int64)
    if np.any(nb != [len(t) for t in thresholds]):
        raise StructuralError("bucket and threshold bin counts differ")

    # All features scanned at once on concatenated bins; prefix sums are
    # taken per feature by subtracting each segment's running offset.
    start = np.concatenate([[0], np.cumsum(nb)[:-1]])
    seg = np.repeat(np.arange(m), nb)

    def prefix(parts):
        flat = np.concatenate(parts).astype(np.float64)
        cum = np.cumsum(flat)
        base = np.concatenate([[0.0], cum])[start]
        return cum - base[seg], (cum[start + nb - 1] - base)[seg]

    cg, tg = prefix(buckets.grad)
    ch, th = prefix(buckets.hess)
    cc, tc = prefix(buckets.count)
    mg, mh = buckets.missing_grad[seg], buckets.missing_hess[seg]
    rg, rh, rc = tg - cg, th - ch, tc - cc
    last_bin = np.zeros(seg.size, dtype=bool)
    last_bin[start + nb - 1] = True
    valid = (cc > 0) & (rc > 0) & ~last_bin
    with np.errstate(divide="ignore", invalid="ignore"):
        ok_l = valid & (ch + mh + reg_lambda > 0) & (rh + reg_lambda > 0)
        ok_r = valid & (ch + reg_lambda > 0) & (rh + mh + reg_lambda > 0)
        gain_l = np.where(ok_l, split_gain(cg + mg, ch + mh, rg, rh, reg_lambda, gamma), -np.inf)
        gain_r = np.where(ok_r, split_gain(cg, ch, rg + mg, rh + mh, reg_lambda, gamma), -np.inf)
    best = max(float(np.max(gain_l)), float(np.max(gain_r)))
    if not np.isfinite(best) or not best > min_gain:
        return None
    # Gains within rounding noise of each other are ties, so the choice does
    # not depend on summation order: left before right, then the lowest
    # feature, then the lowest threshold.
    tol = TIE_RTOL * abs(best)
    left_wins = gain_l >= gain_r - tol
    gain = np.where(left_wins, gain_l, gain_r)
    k = int(np.flatnonzero(gain >= best - tol)[0])
    f = int(seg[k])
    b = int(k - start[f])
    return SplitCandidate(f, b, float(thresholds[f][b]), float(gain[k]), bool(left_wins[k]))


def _leaf(G: float, H: float, reg_lambda: float) -> Node:
    try:
        return Node(weight=leaf_weight(G, H, reg_lambda))
    except DegenerateLeafError:
        return Node(weight=0.0)


def grow_tree(
    binned: BinnedGradients,
    config: TrainingConfig,
    root_buckets: Optional[GradHessBuckets] = None,
) -> Tree:
    """Grow one tree breadth-first from binned per-sample g/h.

    ``root_buckets`` lets the caller supply already-fused root statistics;
    deeper nodes are histogrammed from ``binned``.
    """
    if binned.n_samples == 0:
        raise StructuralError("cannot grow a tree without samples")
    nodes: list[Node] = [Node()]
    level = [(0, np.arange(binned.n_samples))]
    depth = 0
    while level:
        next_level = []
        for nid, rows in level:
            bk = root_buckets if (nid == 0 and root_buckets is not None) else binned.buckets(rows)
            G, H, _ = bk.totals(0)
            split = None
            if depth < config.max_depth:
                split = find_best_split(
                    bk, binned.thresholds, config.reg_lambda, config.gamma, config.min_gain
                )
            if split is None:
                nodes[nid] = _leaf(G, H, config.reg_lambda)
                continue
            codes = binned.codes[rows, split.feature]
            missing = codes == MISSING_CODE
            go_left = np.where(missing, split.default_left, codes <= split.bin)
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes.extend([Node(), Node()])
            nodes[nid] = Node(
                feature=split.feature,
                threshold=split.threshold,
                default_left=split.default_left,
                left=left_id,
                right=right_id,
            )
            next_level.append((left_id, rows[go_left]))
            next_level.append((right_id, rows[~go_left]))
        level = next_level
        depth += 1
    return Tree(nodes=nodes)
