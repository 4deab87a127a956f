"""Synthetic rumor cascades with class-dependent shape and node features.

Every claim is a tree grown node by node. A new node picks its parent with
weight ``(1 + children) ** branching * exp(depth_bias * depth)``, where
both exponents depend on the class, so some classes spread wide and others
run deep. Node features are the class signal plus isotropic noise, blended
with the parent's features (replies echo what they answer). A fraction of
replies is off-topic: pure noise, no signal, no echo.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cascade import Claim, Dataset, FOUR_CLASS, LabelSet, TweetNode

_BRANCHING = (2.0, 0.0, 1.0, 0.5, 1.5)
_DEPTH_BIAS = (-1.0, 1.0, 0.0, 0.5, -0.5)


@dataclass(frozen=True)
class GenConfig:
    claims_per_class: int = 125
    labels: tuple[str, ...] = FOUR_CLASS.names
    min_nodes: int = 8
    max_nodes: int = 24
    branching: tuple[float, ...] = ()
    depth_bias: tuple[float, ...] = ()
    dim: int = 32
    snr: float = 0.2
    coherence: float = 0.5
    irrelevant_rate: float = 0.1
    rho: float = 0.0
    mean_gap_minutes: float = 5.0
    num_events: int = 0
    seed: int = 7

    def __post_init__(self):
        k = len(self.labels)
        if not self.branching:
            object.__setattr__(self, "branching", tuple(_BRANCHING[i % len(_BRANCHING)] for i in range(k)))
        if not self.depth_bias:
            object.__setattr__(self, "depth_bias", tuple(_DEPTH_BIAS[i % len(_DEPTH_BIAS)] for i in range(k)))
        LabelSet(tuple(self.labels))
        if len(self.branching) != k or len(self.depth_bias) != k:
            raise ValueError("branching and depth_bias need one entry per label")
        if self.claims_per_class < 1:
            raise ValueError("claims_per_class must be at least 1")
        if self.min_nodes < 1 or self.max_nodes < self.min_nodes:
            raise ValueError(f"infeasible node range [{self.min_nodes}, {self.max_nodes}]")
        if self.dim < 2:
            raise ValueError("feature dimension must be at least 2")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not 0.0 <= self.irrelevant_rate <= 1.0:
            raise ValueError("irrelevant_rate must lie in [0, 1]")
        if not 0.0 <= self.coherence < 1.0:
            raise ValueError("coherence must lie in [0, 1)")
        if self.snr < 0:
            raise ValueError("snr must be non-negative")

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(tuple(self.labels))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    """A generated dataset together with its node features, keyed by node uid."""

    dataset: Dataset
    features: dict[str, np.ndarray]
    signals: np.ndarray
    irrelevant: set[str] = field(default_factory=set)

    def matrices(self, dataset: Dataset | None = None) -> list[np.ndarray]:
        ds = dataset or self.dataset
        return [np.stack([self.features[nd.uid] for nd in c.nodes]) for c in ds.claims]


def class_signals(cfg: GenConfig) -> np.ndarray:
    """One signal vector per class, norm ``snr * sqrt(dim)``.

    Infinite SNR gives unit-norm signals (the noise is switched off instead).
    """
    rng = np.random.default_rng([cfg.seed, 0])
    s = rng.standard_normal((len(cfg.labels), cfg.dim))
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    scale = 1.0 if math.isinf(cfg.snr) else cfg.snr * math.sqrt(cfg.dim)
    return s * scale


def _grow_tree(rng, n, branching, depth_bias):
    parents = [-1]
    depth = [0]
    children = [0]
    for _ in range(1, n):
        w = (1.0 + np.asarray(children)) ** branching * np.exp(depth_bias * np.asarray(depth))
        p = int(rng.choice(len(parents), p=w / w.sum()))
        parents.append(p)
        depth.append(depth[p] + 1)
        children.append(0)
        children[p] += 1
    return parents


def generate(cfg: GenConfig) -> SyntheticData:
    """Balanced synthetic dataset, fully determined by ``cfg.seed``.

    Claims are emitted class by class; node uids are ``<claim_id>:<k>`` so
    they are unique across the whole dataset.
    """
    signals = class_signals(cfg)
    noise_sd = 0.0 if math.isinf(cfg.snr) else 1.0
    lam = cfg.coherence
    claims = []
    features: dict[str, np.ndarray] = {}
    irrelevant: set[str] = set()
    for c, label in enumerate(cfg.labels):
        for j in range(cfg.claims_per_class):
            rng = np.random.default_rng([cfg.seed, 1, c, j])
            cid = f"{label}-{j:04d}"
            n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
            parents = _grow_tree(rng, n, cfg.branching[c], cfg.depth_bias[c])
            gaps = rng.exponential(cfg.mean_gap_minutes, size=n)
            gaps[0] = 0.0
            times = np.cumsum(gaps)
            off_topic = rng.random(n) < cfg.irrelevant_rate
            off_topic[0] = False
            x = np.zeros((n, cfg.dim))
            for k in range(n):
                noise = noise_sd * rng.standard_normal(cfg.dim)
                if off_topic[k]:
                    x[k] = noise
                elif k == 0:
                    x[k] = signals[c] + noise
                else:
                    x[k] = lam * x[parents[k]] + (1.0 - lam) * (signals[c] + noise)
            nodes = []
            for k in range(n):
                uid = f"{cid}:{k}"
                nodes.append(TweetNode(uid, "", float(times[k])))
                features[uid] = x[k]
                if off_topic[k]:
                    irrelevant.add(uid)
            event = f"E{(j % cfg.num_events)}" if cfg.num_events > 0 else None
            claim = Claim(cid, label, tuple(nodes), tuple((parents[k], k) for k in range(1, n)), event)
            if cfg.rho > 0:
                claim = perturb_edges(claim, cfg.rho, [cfg.seed, 2, c, j])
            claims.append(claim)
    return SyntheticData(Dataset(tuple(claims), cfg.label_set), features, signals, irrelevant)


def perturb_edges(claim: Claim, rho: float, seed) -> Claim:
    """Rewire each edge's parent, with probability ``rho``, to a random earlier node.

    "Earlier" means smaller (time, index). Candidates exclude the child's
    current parents and its descendants, so the result stays a rooted DAG.
    Edges out of node 0 are rewired like any other edge; the first reply
    has no alternative and keeps its parent.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if rho == 0 or not claim.edges:
        return claim
    rng = np.random.default_rng(seed)
    n = claim.n
    key = [(nd.t, i) for i, nd in enumerate(claim.nodes)]
    edges = list(claim.edges)
    for idx in range(len(edges)):
        if rng.random() >= rho:
            continue
        p, c = edges[idx]
        parents_of_c = {a for a, b in edges if b == c}
        desc = _descendants(edges, c, n)
        cands = [u for u in range(n) if key[u] < key[c] and u not in parents_of_c and u not in desc]
        if not cands:
            continue
        edges[idx] = (cands[int(rng.integers(len(cands)))], c)
    return replace(claim, edges=tuple(edges))


def _descendants(edges, root, n) -> set[int]:
    children: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        children[a].append(b)
    out = set()
    stack = [root]
    while stack:
        u = stack.pop()
        for v in children[u]:
            if v not in out:
                out.add(v)
                stack.append(v)
    out.add(root)
    return out


def perturb_dataset(dataset: Dataset, rho: float, seed: int) -> Dataset:
    return Dataset(tuple(perturb_edges(c, rho, [seed, i]) for i, c in enumerate(dataset.claims)),
                   dataset.label_set)
