"""Aggregator/party simulation of party-adaptive federated boosting.

Parties never expose their rows. Every cross-party exchange is a
:class:`Message` that passes through JSON serialization, even in-process,
so the wire format is always exercised.

Round structure: the aggregator broadcasts the current model, each party
replies with per-bin g/h sums, per-sample g/h and (on its first reply) its
surrogate histogram plus the bin code of every local row. The aggregator
re-bins everything onto one merged grid and grows the next tree.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .buckets import BinnedGradients, GradHessBuckets
from .config import TrainingConfig
from .errors import ConfigurationError, ProtocolError
from .gbt import Ensemble, Tree, grad_hess, grow_tree, loss_value
from .histogram import (
    MergedHistograms,
    SurrogateHistogram,
    bucketize,
    compute_histogram,
    fuse_buckets,
    merge_histograms,
    remap_codes,
    select_merge_epsilon,
)
from .wire import decode_array, encode_array

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
AGGREGATOR_ID = "aggregator"

DATA_COUNT_QUERY = "DataCountQuery"
DATA_COUNT_REPLY = "DataCountReply"
EPSILON_ASSIGN = "EpsilonAssign"
MODEL_BROADCAST = "ModelBroadcast"
GRADIENT_REPLY = "GradientReply"
TERMINATE = "Terminate"
MESSAGE_TYPES = frozenset(
    {DATA_COUNT_QUERY, DATA_COUNT_REPLY, EPSILON_ASSIGN, MODEL_BROADCAST, GRADIENT_REPLY, TERMINATE}
)


@dataclass
class Message:
    type: str
    round: int
    sender: str
    receiver: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": self.type,
                "round": self.round,
                "sender": self.sender,
                "receiver": self.receiver,
                "payload": self.payload,
                "schema_version": SCHEMA_VERSION,
            },
            sort_keys=True,
            allow_nan=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "Message":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ProtocolError(f"unsupported message schema {d.get('schema_version')!r}")
        return cls(d["type"], int(d["round"]), d["sender"], d["receiver"], d["payload"])


class InProcessTransport:
    """FIFO queue per (sender, receiver) carrying serialized messages."""

    def __init__(self):
        self._queues: dict[tuple[str, str], deque[str]] = {}
        self.bytes_sent = 0

    def send(self, msg: Message) -> None:
        wire = msg.to_json()
        self.bytes_sent += len(wire)
        self._queues.setdefault((msg.sender, msg.receiver), deque()).append(wire)

    def receive(self, sender: str, receiver: str) -> Message:
        q = self._queues.get((sender, receiver))
        if not q:
            raise ProtocolError(f"timed out waiting for {sender} -> {receiver}")
        return Message.from_json(q.popleft())

    def pending(self, sender: str, receiver: str) -> int:
        return len(self._queues.get((sender, receiver), ()))


def compute_local_epsilon(epsilon_global: float, sizes: Sequence[int]) -> list[float]:
    """Split the global error budget across parties in proportion to their size."""
    if not 0.0 < epsilon_global <= 1.0:
        raise ConfigurationError("epsilon_global must lie in (0, 1]")
    if not sizes:
        raise ConfigurationError("empty roster")
    if any(int(s) < 1 for s in sizes):
        raise ConfigurationError("every party must hold at least one sample")
    total = float(sum(int(s) for s in sizes))
    return [epsilon_global * (int(s) / total) for s in sizes]


def _model_payload(model: Ensemble) -> dict:
    return model.to_dict()


class Party:
    """A data holder. Its rows stay in ``_data`` and never leave this object."""

    def __init__(self, party_id: str, data, quantize_predict: bool = True):
        self.party_id = party_id
        self._data = data
        self.quantize_predict = quantize_predict
        self.epsilon: Optional[float] = None
        self.histogram: Optional[SurrogateHistogram] = None
        self.model: Optional[Ensemble] = None
        self._codes: Optional[np.ndarray] = None
        self._eval_X: Optional[np.ndarray] = None
        self._sent_histogram = False
        # Raw scores of a model prefix; a broadcast that extends the cached
        # prefix only needs its new trees evaluated.
        self._cache_head: Optional[tuple] = None
        self._cache_trees: list[dict] = []
        self._cache_score: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return len(self._data.y)

    def handle(self, msg: Message) -> Optional[Message]:
        if msg.receiver != self.party_id:
            raise ProtocolError(f"{self.party_id} got a message for {msg.receiver}")
        if msg.type == DATA_COUNT_QUERY:
            return Message(DATA_COUNT_REPLY, msg.round, self.party_id, msg.sender,
                           {"count": self.n_samples})
        if msg.type == EPSILON_ASSIGN:
            if self.epsilon is not None:
                raise ProtocolError(f"{self.party_id}: epsilon already assigned")
            self.epsilon = float(msg.payload["epsilon"])
            self.histogram = compute_histogram(self._data, self.epsilon)
            self._codes = self.histogram.codes(self._data.X)
            self._eval_X = (self.histogram.quantize(self._data.X) if self.quantize_predict
                            else np.asarray(self._data.X, dtype=np.float64))
            return None
        if msg.type == MODEL_BROADCAST:
            return self._gradient_reply(msg)
        if msg.type == TERMINATE:
            self.model = Ensemble.from_dict(msg.payload["model"])
            return None
        raise ProtocolError(f"{self.party_id} cannot handle {msg.type}")

    def _raw_scores(self, model_dict: dict) -> np.ndarray:
        if self._eval_X is None:
            raise ProtocolError(f"{self.party_id}: model received before epsilon")
        head = (model_dict["loss"], model_dict["base_score"], model_dict["learning_rate"])
        trees = model_dict["trees"]
        k = len(self._cache_trees)
        if head != self._cache_head or trees[:k] != self._cache_trees:
            self._cache_head, self._cache_trees = head, []
            self._cache_score = np.full(self.n_samples, float(model_dict["base_score"]))
            k = 0
        lr = float(model_dict["learning_rate"])
        for td in trees[k:]:
            self._cache_score = self._cache_score + lr * Tree.from_dict(td).predict(self._eval_X)
            self._cache_trees.append(td)
        return self._cache_score

    def _gradient_reply(self, msg: Message) -> Message:
        model_dict = msg.payload["model"]
        self.model = Ensemble.from_dict(model_dict)
        g, h = grad_hess(self.model.loss, self._data.y, self._raw_scores(model_dict))
        bk = bucketize(self.histogram, self._codes, g, h, source=self.party_id)
        payload = {
            "epsilon": self.epsilon,
            "buckets": bk.to_payload(),
            "grad": encode_array(g),
            "hess": encode_array(h),
        }
        # The histogram and row codes do not change between rounds; send them once.
        if not self._sent_histogram:
            payload["histogram"] = self.histogram.to_payload()
            payload["codes"] = encode_array(self._codes, "<i4")
            self._sent_histogram = True
        return Message(GRADIENT_REPLY, msg.round, self.party_id, msg.sender, payload)

    def local_loss(self, model: Ensemble) -> tuple[float, int]:
        """(summed loss, row count) of ``model`` on local data; telemetry only."""
        raw = self._raw_scores(model.to_dict())
        return float(np.sum(loss_value(model.loss, self._data.y, raw))), self.n_samples

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        """Raw scores of the final model on ``X``, quantized through this party's histogram."""
        if self.model is None or self.histogram is None:
            raise ProtocolError(f"{self.party_id} has no trained model")
        X = np.asarray(X, dtype=np.float64)
        return self.model.predict_raw(self.histogram.quantize(X) if self.quantize_predict else X)


@dataclass
class RoundTelemetry:
    t: int
    eps_m: float
    train_loss: float
    elapsed_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class _PartyView:
    """What the aggregator knows about one party."""

    size: int = 0
    epsilon: float = 0.0
    histogram: Optional[SurrogateHistogram] = None
    codes: Optional[np.ndarray] = None


class Aggregator:
    """Owns the global model and drives rounds over a transport."""

    def __init__(self, config: TrainingConfig, roster: Sequence[str], transport: InProcessTransport,
                 n_features: Optional[int] = None):
        if not roster:
            raise ConfigurationError("empty roster")
        if len(set(roster)) != len(roster):
            raise ConfigurationError("duplicate party ids in roster")
        self.config = config
        self.roster = list(roster)
        self.transport = transport
        self.model = Ensemble(loss=config.loss, base_score=0.0,
                              learning_rate=config.learning_rate, n_features=n_features)
        self.t = 0
        self.sizes: list[int] = []
        self.epsilons: list[float] = []
        self.eps_m: Optional[float] = None
        self.last_buckets: Optional[GradHessBuckets] = None
        self._views = {pid: _PartyView() for pid in self.roster}
        self._merged: Optional[MergedHistograms] = None
        self._merged_codes: Optional[np.ndarray] = None

    def send(self, msg_type: str, receiver: str, payload: Optional[dict] = None) -> None:
        self.transport.send(Message(msg_type, self.t, AGGREGATOR_ID, receiver, payload or {}))

    def collect_counts(self) -> list[int]:
        self.sizes = []
        for pid in self.roster:
            msg = self.transport.receive(pid, AGGREGATOR_ID)
            if msg.type != DATA_COUNT_REPLY:
                raise ProtocolError(f"expected {DATA_COUNT_REPLY} from {pid}, got {msg.type}")
            self._views[pid].size = int(msg.payload["count"])
            self.sizes.append(self._views[pid].size)
        return self.sizes

    def assign_epsilons(self) -> list[float]:
        self.epsilons = compute_local_epsilon(self.config.epsilon_global, self.sizes)
        for pid, eps in zip(self.roster, self.epsilons):
            self._views[pid].epsilon = eps
        return self.epsilons

    def collect_gradients(self) -> list[tuple[GradHessBuckets, np.ndarray, np.ndarray]]:
        """Barrier: exactly one reply per roster party for the current round."""
        out = []
        for pid in self.roster:
            msg = self.transport.receive(pid, AGGREGATOR_ID)
            if msg.type != GRADIENT_REPLY:
                raise ProtocolError(f"expected {GRADIENT_REPLY} from {pid}, got {msg.type}")
            if msg.round != self.t:
                raise ProtocolError(f"{pid} replied for round {msg.round}, expected {self.t}")
            if self.transport.pending(pid, AGGREGATOR_ID):
                raise ProtocolError(f"{pid} sent more than one reply in round {self.t}")
            view = self._views[pid]
            if "histogram" in msg.payload:
                if view.histogram is not None:
                    raise ProtocolError(f"{pid} resent its histogram")
                view.histogram = SurrogateHistogram.from_payload(msg.payload["histogram"])
                view.codes = decode_array(msg.payload["codes"]).astype(np.int64)
                if view.codes.shape[0] != view.size:
                    raise ProtocolError(f"{pid}: codes cover {view.codes.shape[0]} rows, "
                                        f"count was {view.size}")
            if view.histogram is None:
                raise ProtocolError(f"{pid} never sent a histogram")
            out.append((
                GradHessBuckets.from_payload(msg.payload["buckets"]),
                decode_array(msg.payload["grad"]).astype(np.float64),
                decode_array(msg.payload["hess"]).astype(np.float64),
            ))
        return out

    def _ensure_merged(self, eps_m: float) -> MergedHistograms:
        if self._merged is None or self._merged.hist.epsilon != eps_m:
            hists = [self._views[pid].histogram for pid in self.roster]
            self._merged = merge_histograms(hists, eps_m)
            self._merged_codes = np.vstack([
                remap_codes(self._views[pid].codes, self._merged.bin_maps[p])
                for p, pid in enumerate(self.roster)
            ])
        return self._merged

    def fuse_and_grow(self, replies) -> None:
        eps_m = select_merge_epsilon(self.epsilons, self.config.loss)
        merged = self._ensure_merged(eps_m)
        buckets = fuse_buckets([r[0] for r in replies], merged)
        binned = BinnedGradients(
            self._merged_codes,
            np.concatenate([r[1] for r in replies]),
            np.concatenate([r[2] for r in replies]),
            merged.hist.thresholds,
        )
        tree = grow_tree(binned, self.config, root_buckets=buckets)
        self.model.trees.append(tree)
        self.eps_m = eps_m
        self.last_buckets = buckets
        self.t += 1


class Federation:
    """Lock-step simulator wiring one aggregator to its parties."""

    def __init__(self, config: TrainingConfig, party_datasets: Sequence, party_ids=None):
        if not party_datasets:
            raise ConfigurationError("empty roster")
        ids = list(party_ids) if party_ids else [f"party{i + 1}" for i in range(len(party_datasets))]
        if len(ids) != len(party_datasets):
            raise ConfigurationError("party_ids and datasets differ in length")
        widths = {np.asarray(d.X).shape[1] for d in party_datasets}
        if len(widths) != 1:
            raise ConfigurationError("parties disagree on feature count")
        self.config = config
        self.transport = InProcessTransport()
        self.parties = [Party(pid, d, config.quantize_predict) for pid, d in zip(ids, party_datasets)]
        self.aggregator = Aggregator(config, ids, self.transport, n_features=widths.pop())
        self._ready = False

    def _deliver(self, party: Party) -> None:
        while self.transport.pending(AGGREGATOR_ID, party.party_id):
            msg = self.transport.receive(AGGREGATOR_ID, party.party_id)
            try:
                reply = party.handle(msg)
            except ProtocolError:
                raise
            except Exception as exc:
                raise ProtocolError(f"{party.party_id} failed in round {msg.round}: {exc}") from exc
            if reply is not None:
                self.transport.send(reply)

    def setup(self) -> None:
        """Count query, epsilon allocation and local histogram construction."""
        agg = self.aggregator
        for p in self.parties:
            agg.send(DATA_COUNT_QUERY, p.party_id)
            self._deliver(p)
        agg.collect_counts()
        agg.assign_epsilons()
        for p, eps in zip(self.parties, agg.epsilons):
            agg.send(EPSILON_ASSIGN, p.party_id, {"epsilon": eps})
            self._deliver(p)
        self._ready = True

    def run_round(self) -> None:
        if not self._ready:
            raise ProtocolError("setup() must run before the first round")
        agg = self.aggregator
        if agg.t >= self.config.max_rounds:
            raise ProtocolError("maximum number of rounds reached")
        payload = {"model": _model_payload(agg.model)}
        for p in self.parties:
            agg.send(MODEL_BROADCAST, p.party_id, payload)
        for p in self.parties:
            self._deliver(p)
        agg.fuse_and_grow(agg.collect_gradients())

    def training_loss(self) -> float:
        total, n = 0.0, 0
        for p in self.parties:
            s, c = p.local_loss(self.aggregator.model)
            total += s
            n += c
        return total / n

    def terminate(self) -> None:
        for p in self.parties:
            self.aggregator.send(TERMINATE, p.party_id, {"model": _model_payload(self.aggregator.model)})
            self._deliver(p)


@dataclass
class TrainingResult:
    model: Ensemble
    telemetry: list[RoundTelemetry]
    epsilons: list[float]
    sizes: list[int]
    bytes_sent: int = 0
    parties: list[Party] = field(default_factory=list, repr=False)

    def telemetry_jsonl(self) -> str:
        return "".join(t.to_json() + "\n" for t in self.telemetry)


def run_round(federation: Federation) -> Federation:
    federation.run_round()
    return federation


def run_training(config: TrainingConfig, party_datasets: Sequence, party_ids=None) -> TrainingResult:
    """Train a global ensemble across parties; returns the model and per-round telemetry."""
    fed = Federation(config, party_datasets, party_ids)
    fed.setup()
    telemetry: list[RoundTelemetry] = []
    stale = 0
    prev = fed.training_loss()
    while fed.aggregator.t < config.max_rounds:
        start = time.perf_counter()
        fed.run_round()
        loss = fed.training_loss()
        telemetry.append(RoundTelemetry(
            t=fed.aggregator.t,
            eps_m=fed.aggregator.eps_m,
            train_loss=loss,
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
        ))
        log.debug("round %d loss %.6f", fed.aggregator.t, loss)
        if config.early_stopping:
            stale = stale + 1 if prev - loss < config.early_stopping_tol else 0
            if stale >= config.early_stopping_patience:
                log.info("early stop after round %d", fed.aggregator.t)
                break
        prev = loss
    fed.terminate()
    return TrainingResult(
        model=fed.aggregator.model,
        telemetry=telemetry,
        epsilons=list(fed.aggregator.epsilons),
        sizes=list(fed.aggregator.sizes),
        bytes_sent=fed.transport.bytes_sent,
        parties=list(fed.parties),
    )
