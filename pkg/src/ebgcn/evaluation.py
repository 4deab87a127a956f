"""Metrics, data splits, early-detection curves and the edge-noise robustness experiment."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cascade import Claim, Dataset, PropagationGraph, build_graph, truncate_claim
from .datagen import GenConfig, SyntheticData, generate, perturb_dataset
from .model import ModelConfig, predict_proba
from .train import FitResult, TrainConfig, fit


@dataclass
class MetricReport:
    accuracy: float
    f1: dict[str, float]
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray  # rows gold, columns predicted
    labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "confusion": self.confusion.tolist(),
            "labels": list(self.labels),
        }


def compute_metrics(predictions: Sequence[int], golds: Sequence[int], labels: Sequence[str]) -> MetricReport:
    """Accuracy and per-class, macro and support-weighted F1.

    ``predictions`` and ``golds`` are class indices into ``labels``. A class
    that is never predicted and never gold gets F1 = 0.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(golds, dtype=np.int64)
    k = len(labels)
    if pred.shape != gold.shape or pred.ndim != 1 or len(pred) == 0:
        raise ValueError("predictions and golds must be equal-length non-empty sequences")
    if np.any((pred < 0) | (pred >= k) | (gold < 0) | (gold >= k)):
        raise ValueError(f"class index outside [0, {k})")
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (gold, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    support = conf.sum(axis=1).astype(np.float64)
    denom = predicted + support
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(k), where=denom > 0)
    total = float(len(gold))
    return MetricReport(
        accuracy=float(tp.sum() / total),
        f1={labels[i]: float(f1[i]) for i in range(k)},
        macro_f1=float(f1.mean()),
        weighted_f1=float((support / total * f1).sum()),
        confusion=conf,
        labels=tuple(labels),
    )


def kfold_splits(labels: Sequence[int], k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold: returns (train, test) index arrays per fold.

    Each class is shuffled and dealt round-robin, continuing the deal
    across classes, so fold sizes and per-class counts differ by at most one.
    """
    labels = np.asarray(labels)
    m = len(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > m:
        raise ValueError(f"cannot make {k} folds from {m} claims")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(m, dtype=np.int64)
    pos = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (pos + np.arange(len(idx))) % k
        pos += len(idx)
    everything = np.arange(m)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def stratified_holdout(labels: Sequence[int], test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Split off ``round(test_fraction * class_count)`` claims of every class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(test_fraction * len(idx)))
        test.append(idx[:cut])
        train.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def loeo_splits(dataset: Dataset) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Leave-one-event-out: one (event, train, test) triple per event, in sorted event order."""
    events = [c.event for c in dataset.claims]
    if any(e is None for e in events):
        missing = [c.id for c in dataset.claims if c.event is None]
        raise ValueError(f"claims without an event tag: {missing[:5]}")
    names = sorted(set(events))
    if len(names) < 2:
        raise ValueError("leave-one-event-out needs at least two events")
    ev = np.array(events, dtype=object)
    everything = np.arange(len(events))
    return [(e, everything[ev != e], everything[ev == e]) for e in names]


# -- early detection -------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    """An early-detection budget: a deadline in minutes, a tweet count, or a
    fraction of each claim's tweets. ``math.inf`` in any field means no cut."""

    kind: str  # "deadline", "tweets" or "fraction"
    value: float

    def __post_init__(self):
        if self.kind not in ("deadline", "tweets", "fraction"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        low_ok = self.value >= 0 if self.kind == "deadline" else self.value > 0
        if not low_ok:
            raise ValueError(f"invalid {self.kind} budget {self.value}")

    def apply(self, claim: Claim) -> Claim:
        if math.isinf(self.value):
            return claim
        if self.kind == "deadline":
            return truncate_claim(claim, deadline_minutes=self.value)
        if self.kind == "tweets":
            return truncate_claim(claim, max_tweets=int(self.value))
        return truncate_claim(claim, max_tweets=max(1, math.ceil(self.value * claim.n)))

    def label(self) -> str:
        return f"{self.kind}={self.value:g}"


def truncated_graphs(claims: Sequence[Claim], feature_of: Callable[[str, str], np.ndarray],
                     budget: Budget | None = None) -> list[PropagationGraph]:
    out = []
    for c in claims:
        t = budget.apply(c) if budget is not None else c
        out.append(build_graph(t, np.stack([feature_of(c.id, nd.uid) for nd in t.nodes])))
    return out


def evaluate_graphs(graphs: Sequence[PropagationGraph], golds: Sequence[int], params, cfg: ModelConfig,
                    labels: Sequence[str]) -> MetricReport:
    probs = predict_proba(list(graphs), params, cfg)
    return compute_metrics(probs.argmax(axis=1), golds, labels)


def early_detection_curve(params, cfg: ModelConfig, dataset: Dataset, feature_of: Callable[[str, str], np.ndarray],
                          budgets: Sequence[Budget]) -> list[tuple[Budget, MetricReport]]:
    """Metrics after truncating every claim to each budget in turn.

    ``feature_of(claim_id, uid)`` returns a node's feature row.
    """
    if not budgets:
        raise ValueError("need at least one budget")
    golds = dataset.labels()
    names = dataset.label_set.names
    return [(b, evaluate_graphs(truncated_graphs(dataset.claims, feature_of, b), golds, params, cfg, names))
            for b in budgets]


def curve_csv(curve: Sequence[tuple[Budget, MetricReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "budget", "accuracy", "macro_f1", "weighted_f1"])
    for b, rep in curve:
        w.writerow([b.kind, b.value, rep.accuracy, rep.macro_f1, rep.weighted_f1])
    return buf.getvalue()


# -- fixture experiments ---------------------------------------------------


@dataclass
class Fixture:
    """A generated dataset split into train / validation / test claims."""

    data: SyntheticData
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def dataset(self) -> Dataset:
        return self.data.dataset

    def feature_of(self, claim_id: str, uid: str) -> np.ndarray:
        return self.data.features[uid]

    def samples(self, idx, dataset: Dataset | None = None):
        ds = dataset or self.dataset
        labels = ds.labels()
        claims = [ds.claims[i] for i in idx]
        return list(zip(truncated_graphs(claims, self.feature_of), labels[idx].tolist()))


def make_fixture(gen: GenConfig | None = None, test_fraction: float = 0.2, val_fraction: float = 0.1,
                 split_seed: int = 0) -> Fixture:
    """Generate data and split it: stratified test holdout, then a stratified validation slice of the rest."""
    data = generate(gen or GenConfig())
    labels = data.dataset.labels()
    rest, test = stratified_holdout(labels, test_fraction, split_seed)
    tr, va = stratified_holdout(labels[rest], val_fraction, split_seed + 1)
    if min(len(tr), len(va), len(test)) == 0:
        raise ValueError("a train, validation or test split is empty; adjust the split fractions")
    return Fixture(data, rest[tr], rest[va], test)


def train_on_fixture(fx: Fixture, config: TrainConfig) -> FitResult:
    return fit(fx.samples(fx.train), fx.samples(fx.val), config, len(fx.dataset.label_set))


def holdout_metrics(fx: Fixture, result: FitResult, dataset: Dataset | None = None) -> MetricReport:
    ds = dataset or fx.dataset
    samples = fx.samples(fx.test, ds)
    graphs = [g for g, _ in samples]
    golds = [y for _, y in samples]
    return evaluate_graphs(graphs, golds, result.params, result.model_config, ds.label_set.names)


@dataclass
class RobustnessConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rhos: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass
class RobustnessRow:
    seed: int
    model: str
    rho: float
    accuracy: float
    drop: float  # accuracy at rho = 0 minus accuracy at this rho


@dataclass
class RobustnessReport:
    rows: list[RobustnessRow]

    def mean_drop(self, model: str, rho: float) -> float:
        vals = [r.drop for r in self.rows if r.model == model and r.rho == rho]
        return float(np.mean(vals))

    def mean_accuracy(self, model: str, rho: float) -> float:
        return float(np.mean([r.accuracy for r in self.rows if r.model == model and r.rho == rho]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "model", "rho", "accuracy", "drop"])
        for r in self.rows:
            w.writerow([r.seed, r.model, r.rho, r.accuracy, r.drop])
        return buf.getvalue()


def ablation_config(config: TrainConfig) -> TrainConfig:
    """The gate-free baseline: edge inference off, supervised loss only."""
    return replace(config, edge_inference=False, gamma=1.0)


def robustness_experiment(config: RobustnessConfig, fixture: Fixture | None = None,
                          on_result: Callable[[str, int, FitResult], None] | None = None) -> RobustnessReport:
    """Train both models on clean data, test both on increasingly rewired test claims.

    The rewired test sets depend only on (rho, seed), so both models see
    exactly the same perturbed claims.
    """
    fx = fixture or make_fixture(config.gen)
    test_ds = fx.dataset
    rows = []
    for seed in config.seeds:
        perturbed = {rho: perturb_dataset(test_ds, rho, seed=1000 + seed) for rho in config.rhos}
        models = {
            "ebgcn": replace(config.train, seed=seed),
            "ablation": ablation_config(replace(config.train, seed=seed)),
        }
        for name, tcfg in models.items():
            result = train_on_fixture(fx, tcfg)
            if on_result is not None:
                on_result(name, seed, result)
            accs = {rho: holdout_metrics(fx, result, perturbed[rho]).accuracy for rho in config.rhos}
            base = accs.get(0.0, accs[config.rhos[0]])
            rows.extend(RobustnessRow(seed, name, rho, accs[rho], base - accs[rho]) for rho in config.rhos)
    return RobustnessReport(rows)


def report_json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.integer, np.floating)):
            return o.item()
        if hasattr(o, "to_dict"):
            return o.to_dict()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(type(o).__name__)

    return json.dumps(obj, default=default, indent=2, sort_keys=True)
