"""Adam training loop with validation-based early stopping."""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .cascade import PropagationGraph
from .checkpoint import load_arrays, save_arrays
from .model import GraphBatch, ModelConfig, forward_batch, init_params
from .objective import LossBreakdown, objective

log = logging.getLogger(__name__)

Sample = tuple[PropagationGraph, int]


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, last_good: dict[str, np.ndarray] | None = None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    max_epochs: int = 200
    patience: int = 10
    gamma: float = 0.3
    relations: int = 3
    hidden: int = 64
    batch_size: int = 16
    seed: int = 0
    precision: int = 64
    edge_inference: bool = True
    min_delta: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 1 <= self.relations <= 5:
            raise ValueError(f"relations (T) must lie in [1, 5], got {self.relations}")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        for name in ("learning_rate", "max_epochs", "patience", "hidden", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def model_config(self, in_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(in_dim, num_classes, self.hidden, self.relations, self.edge_inference)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    split: str
    supervised: float
    consistency: float
    total: float
    accuracy: float


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    model_config: ModelConfig
    history: list[EpochLog]
    best_epoch: int
    best_val_loss: float
    adam: AdamState
    stopped_epoch: int

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: Sequence[EpochLog]) -> str:
    buf = io.StringIO()
    buf.write("epoch,split,L_c,L_e,total,acc\n")
    for h in history:
        buf.write(f"{h.epoch},{h.split},{h.supervised!r},{h.consistency!r},{h.total!r},{h.accuracy!r}\n")
    return buf.getvalue()


def _labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([y for _, y in samples], dtype=np.int64)


def evaluate_loss(samples: Sequence[Sample], params, cfg: ModelConfig, gamma: float,
                  batch_size: int = 64) -> tuple[LossBreakdown, float]:
    """Eval-mode loss (posterior mean, no sampling) and accuracy, averaged over claims."""
    lc = le = correct = 0.0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = GraphBatch.from_graphs([g for g, _ in chunk])
        labels = _labels(chunk)
        out = forward_batch(batch, params, cfg, "eval")
        _, parts = objective(out, labels, gamma)
        lc += parts.supervised * len(chunk)
        le += parts.consistency * len(chunk)
        correct += float(np.sum(out.probs.value.argmax(axis=1) == labels))
    n = len(samples)
    lc, le = lc / n, le / n
    return LossBreakdown(lc, le, gamma * lc + (1 - gamma) * le, gamma), correct / n


def fit(train: Sequence[Sample], val: Sequence[Sample], config: TrainConfig, num_classes: int,
        init: dict[str, np.ndarray] | None = None) -> FitResult:
    """Train on ``train`` and keep the parameters with the best validation loss."""
    if not train or not val:
        raise ValueError("train and validation splits must be non-empty")
    dtype = config.dtype
    train = [(PropagationGraph(g.x.astype(dtype), g.a_td, g.a_bu, g.claim_id), int(y)) for g, y in train]
    val = [(PropagationGraph(g.x.astype(dtype), g.a_td, g.a_bu, g.claim_id), int(y)) for g, y in val]
    cfg = config.model_config(train[0][0].x.shape[1], num_classes)
    rng = np.random.default_rng(config.seed)
    init_rng, shuffle_rng, noise_rng = rng.spawn(3)
    params = init if init is not None else init_params(cfg, init_rng, dtype)
    params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    state = AdamState.zeros_like(params)
    stopper = EarlyStopping(config.patience, config.min_delta)
    best = {k: v.copy() for k, v in params.items()}
    history: list[EpochLog] = []
    epoch = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train))
        sums = np.zeros(4)
        for start in range(0, len(order), config.batch_size):
            chunk = [train[i] for i in order[start:start + config.batch_size]]
            batch = GraphBatch.from_graphs([g for g, _ in chunk])
            labels = _labels(chunk)
            tape = ad.Tape(dtype=dtype)
            pv = {k: tape.param(v, k) for k, v in params.items()}
            out = forward_batch(batch, pv, cfg, "train", noise_rng, tape)
            loss, parts = objective(out, labels, config.gamma)
            if not np.isfinite(parts.total):
                raise TrainingDiverged(f"loss became {parts.total} at epoch {epoch}", best)
            grads = ad.backward(tape, loss)
            try:
                adam_step(params, grads, state, config.learning_rate)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}", best) from None
            k = len(chunk)
            sums += k * np.array([parts.supervised, parts.consistency, parts.total,
                                  np.mean(out.probs.value.argmax(axis=1) == labels)])
        tr = sums / len(train)
        history.append(EpochLog(epoch, "train", *map(float, tr)))
        vparts, vacc = evaluate_loss(val, params, cfg, config.gamma)
        history.append(EpochLog(epoch, "val", vparts.supervised, vparts.consistency, vparts.total, vacc))
        if not np.isfinite(vparts.total):
            raise TrainingDiverged(f"validation loss became {vparts.total} at epoch {epoch}", best)
        log.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, tr[2], vparts.total, vacc)
        stop = stopper.update(epoch, vparts.total)
        if stopper.best_epoch == epoch:
            best = {k: v.copy() for k, v in params.items()}
        if stop:
            break

    return FitResult(best, cfg, history, stopper.best_epoch, float(stopper.best), state, epoch)


def save_checkpoint(path, result: FitResult, extra_meta: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in result.params.items()}
    arrays.update({f"adam.m/{k}": v for k, v in result.adam.m.items()})
    arrays.update({f"adam.v/{k}": v for k, v in result.adam.v.items()})
    meta = {
        "model": asdict(result.model_config),
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
        "best_val_loss": result.best_val_loss,
        "adam_step": result.adam.step,
    }
    meta.update(extra_meta or {})
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    arrays, meta = load_arrays(path)
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    return params, ModelConfig(**meta["model"]), meta
