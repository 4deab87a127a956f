"""Supervised cross-entropy, edge-wise consistency loss, and their mix.

The consistency term compares, for every gated edge, the relation
likelihood ``p = softmax(W g + b)`` against a distribution drawn from the
Gaussian posterior over relation logits: ``z = mu + sqrt(var) * eps`` and
``q = softmax(z)``. The loss is ``KL(p || q)`` averaged over a claim's edge
records (both directions, both layers), then over claims.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .model import EdgeRecord


@dataclass(frozen=True)
class LossBreakdown:
    supervised: float
    consistency: float
    total: float
    gamma: float


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")


def cross_entropy(probs, labels) -> Var:
    """Mean of -log p[y] over the batch (log floored at 1e-12)."""
    probs = ad.as_var(probs)
    p = probs.value
    labels = np.atleast_1d(np.asarray(labels))
    batch = 1 if p.ndim == 1 else p.shape[0]
    n_cls = p.shape[-1]
    if labels.shape != (batch,) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be {batch} integer class indices")
    if np.any((labels < 0) | (labels >= n_cls)):
        raise ValueError(f"class index out of range [0, {n_cls})")
    onehot = np.zeros((batch, n_cls), dtype=p.dtype)
    onehot[np.arange(batch), labels] = 1.0
    if p.ndim == 1:
        onehot = onehot[0]
    picked = ad.total(ad.mul(ad.log(probs), onehot))
    return ad.scale(picked, -1.0 / batch)


def kl_divergence(p, q) -> Var:
    """Row-wise KL(p || q) = sum_t p_t (log p_t - log q_t), logs floored."""
    return ad.row_sum(ad.mul(p, ad.sub(ad.log(p), ad.log(q))))


def edge_kl(record: EdgeRecord, noise: np.ndarray | None = None) -> Var:
    """Per-edge KL between relation likelihood and the sampled posterior."""
    eps = record.noise if noise is None else noise
    p = ad.row_softmax(record.logits)
    z = record.mu
    if eps is not None:
        z = ad.add(z, ad.mul(ad.sqrt(record.var), eps))
    return kl_divergence(p, ad.row_softmax(z))


def consistency_loss(records: Sequence[EdgeRecord], num_graphs: int, noise: Sequence[np.ndarray] | None = None) -> Var:
    """Average KL over each claim's edge records, then over claims.

    Claims without edges contribute zero. ``noise`` overrides the samples
    stored on the records (one array per record).
    """
    if not records:
        return Var(0.0)
    counts = np.zeros(num_graphs)
    for rec in records:
        counts += np.bincount(rec.owner, minlength=num_graphs)
    loss = None
    for i, rec in enumerate(records):
        if len(rec.owner) == 0:
            continue
        kl = edge_kl(rec, None if noise is None else noise[i])
        weights = 1.0 / (counts[rec.owner] * num_graphs)
        term = ad.total(ad.mul(kl, weights.astype(rec.mu.value.dtype)))
        loss = term if loss is None else ad.add(loss, term)
    return loss if loss is not None else Var(0.0)


def total_loss(supervised, consistency, gamma: float) -> Var:
    """gamma * supervised + (1 - gamma) * consistency."""
    _check_gamma(gamma)
    return ad.add(ad.scale(supervised, gamma), ad.scale(consistency, 1.0 - gamma))


def objective(output, labels, gamma: float) -> tuple[Var, LossBreakdown]:
    """Full training objective for one forward pass."""
    _check_gamma(gamma)
    lc = cross_entropy(output.probs, labels)
    le = consistency_loss(output.records, output.num_graphs)
    tot = total_loss(lc, le, gamma)
    return tot, LossBreakdown(float(lc.value), float(le.value), float(tot.value), gamma)
