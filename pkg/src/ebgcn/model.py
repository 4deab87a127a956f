"""Edge-enhanced Bayesian GCN forward pass.

Each claim is processed in two directions (top-down over the reply tree and
bottom-up over its transpose). Per direction, two blocks of

    edge inference -> adjacency normalization -> graph convolution

run in sequence. The edge-inference step looks at ``|h_i - h_j|`` for every
original edge, maps it to ``T`` latent-relation features ``g`` and rescales
the edge weight by ``sum_t sigmoid(W g + b)_t``. Gates only rescale existing
edges. Edge-inference and posterior heads are shared between directions
and kept separate per layer; graph-convolution weights are per direction.

Claims are batched as a block-diagonal union, which leaves every per-claim
quantity unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .cascade import PropagationGraph

DIRECTIONS = ("td", "bu")
LAYERS = (1, 2)
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    num_classes: int
    hidden: int = 64
    relations: int = 3
    edge_inference: bool = True

    def __post_init__(self):
        if self.relations < 1:
            raise ValueError("need at least one latent relation type")
        if min(self.in_dim, self.num_classes, self.hidden) < 1:
            raise ValueError("dimensions must be positive")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    T, hid = cfg.relations, cfg.hidden
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in LAYERS:
        d_in = cfg.in_dim if layer == 1 else hid
        for d in DIRECTIONS:
            shapes[f"gcl{layer}.{d}.W"] = (d_in, hid)
            shapes[f"gcl{layer}.{d}.b"] = (hid,)
        if cfg.edge_inference:
            shapes[f"edge{layer}.fe.W"] = (d_in, T)
            shapes[f"edge{layer}.fe.b"] = (T,)
            shapes[f"edge{layer}.rel.W"] = (T, T)
            shapes[f"edge{layer}.rel.b"] = (T,)
            shapes[f"edge{layer}.mu.W"] = (T, T)
            shapes[f"edge{layer}.mu.b"] = (T,)
            shapes[f"edge{layer}.var.W"] = (T, T)
            shapes[f"edge{layer}.var.b"] = (T,)
    shapes["cls.W"] = (2 * hid, cfg.num_classes)
    shapes["cls.b"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-a, a, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def check_params(cfg: ModelConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter names do not match the model: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        arr = np.asarray(params[name].value if isinstance(params[name], Var) else params[name])
        if arr.shape != shape:
            raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite entries")


@dataclass
class GraphBatch:
    """Disjoint union of several propagation graphs."""

    x: np.ndarray
    edges: np.ndarray  # (E, 2) top-down pairs, batch-global node indices
    weights: np.ndarray  # (E,) initial top-down weights
    edge_owner: np.ndarray  # (E,) graph index of each edge
    offsets: np.ndarray  # (B + 1,) node offsets
    pool: np.ndarray  # (B, N) mean-pooling matrix
    claim_ids: list[str] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_graphs(cls, graphs: Sequence[PropagationGraph], dtype=None) -> GraphBatch:
        if not graphs:
            raise ValueError("empty batch")
        dims = {g.x.shape[1] for g in graphs}
        if len(dims) != 1:
            raise ValueError(f"graphs disagree on feature dimension: {sorted(dims)}")
        dtype = dtype or graphs[0].x.dtype
        sizes = np.array([g.n for g in graphs])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        n = int(offsets[-1])
        edges, weights, owner = [], [], []
        pool = np.zeros((len(graphs), n), dtype=dtype)
        for b, g in enumerate(graphs):
            e = g.edges()
            edges.append(e + offsets[b])
            weights.append(g.a_td[e[:, 0], e[:, 1]])
            owner.append(np.full(len(e), b))
            pool[b, offsets[b]:offsets[b + 1]] = 1.0 / g.n
        return cls(
            x=np.concatenate([g.x for g in graphs]).astype(dtype, copy=False),
            edges=np.concatenate(edges).astype(np.int64).reshape(-1, 2),
            weights=np.concatenate(weights).astype(dtype),
            edge_owner=np.concatenate(owner).astype(np.int64),
            offsets=offsets,
            pool=pool,
            claim_ids=[g.claim_id for g in graphs],
        )


@dataclass
class EdgeRecord:
    """Per-edge quantities from one edge-inference step."""

    direction: str
    layer: int
    edges: np.ndarray  # (E, 2) edge endpoints in this direction
    owner: np.ndarray
    features: Var  # g, (E, T)
    logits: Var  # W g + b, (E, T); softmax gives the relation likelihood
    gate: Var  # (E,)
    weight: Var  # refined edge weight, (E,)
    mu: Var  # posterior means, (E, T)
    var: Var  # posterior variances, (E, T)
    noise: np.ndarray | None = None  # reparameterization noise, None in eval mode

    def likelihood(self) -> np.ndarray:
        return ad._softmax(self.logits.value)


@dataclass
class ForwardOutput:
    logits: Var
    probs: Var
    records: list[EdgeRecord]
    batch: GraphBatch
    node_features: dict[str, Var] = field(default_factory=dict)

    @property
    def num_graphs(self) -> int:
        return self.batch.num_graphs


def normalize_adjacency(a) -> Var:
    """D^-1/2 (A + I) D^-1/2; rejects negative or non-square input."""
    arr = a.value if isinstance(a, Var) else np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"adjacency must be square, got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("adjacency has negative entries")
    return ad.gcn_normalize(a)


def gcl_forward(a_hat, h, w, b) -> Var:
    """relu(Â H W + b)."""
    return ad.relu(ad.add(ad.matmul(a_hat, ad.matmul(h, w)), b))


def edge_inference(h, w_prev, edges: np.ndarray, p: dict, layer: int) -> dict[str, Var]:
    """Gate every edge by the summed sigmoid of its latent-relation logits.

    ``w_prev`` holds the current weights of ``edges`` (the original support);
    returns the refined weights together with the quantities the
    consistency loss needs.
    """
    pre = f"edge{layer}."
    diff = ad.gather_absdiff(h, edges)
    g = ad.relu(ad.add(ad.matmul(diff, p[pre + "fe.W"]), p[pre + "fe.b"]))
    logits = ad.add(ad.matmul(g, p[pre + "rel.W"]), p[pre + "rel.b"])
    gate = ad.row_sum(ad.sigmoid(logits))
    mu = ad.add(ad.matmul(g, p[pre + "mu.W"]), p[pre + "mu.b"])
    var = ad.add_const(ad.softplus(ad.add(ad.matmul(g, p[pre + "var.W"]), p[pre + "var.b"])), VAR_FLOOR)
    return {"g": g, "logits": logits, "gate": gate, "weight": ad.mul(gate, w_prev), "mu": mu, "var": var}


def forward_batch(
    batch: GraphBatch,
    params: dict,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    tape: ad.Tape | None = None,
) -> ForwardOutput:
    """Run the network on a batch.

    ``params`` may hold arrays or tape variables. In train mode each edge
    record gets standard-normal noise from ``rng`` for the reparameterized
    posterior sample; in eval mode the noise is left out.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    if mode == "train" and cfg.edge_inference and rng is None:
        raise ValueError("train mode needs an rng for posterior sampling")
    p = {k: ad.as_var(v) for k, v in params.items()}
    const = tape.const if tape is not None else ad.as_var
    x = const(batch.x)
    n = batch.num_nodes
    records = []
    pooled = []
    node_features = {}
    for d in DIRECTIONS:
        edges = batch.edges if d == "td" else batch.edges[:, ::-1].copy()
        h = x
        w = const(batch.weights)
        for layer in LAYERS:
            if cfg.edge_inference and len(edges):
                out = edge_inference(h, w, edges, p, layer)
                w = out["weight"]
                noise = None
                if mode == "train":
                    noise = rng.standard_normal(out["mu"].shape).astype(batch.x.dtype)
                records.append(EdgeRecord(d, layer, edges, batch.edge_owner, out["g"], out["logits"],
                                          out["gate"], w, out["mu"], out["var"], noise))
            a = ad.scatter_dense(w, edges, n) if len(edges) else const(np.zeros((n, n), dtype=batch.x.dtype))
            h = gcl_forward(ad.gcn_normalize(a), h, p[f"gcl{layer}.{d}.W"], p[f"gcl{layer}.{d}.b"])
        node_features[d] = h
        pooled.append(ad.matmul(const(batch.pool), h))
    logits = ad.add(ad.matmul(ad.concat_cols(*pooled), p["cls.W"]), p["cls.b"])
    return ForwardOutput(logits, ad.row_softmax(logits), records, batch, node_features)


def forward(graph: PropagationGraph, params: dict, cfg: ModelConfig, mode: str = "eval", seed: int = 0) -> ForwardOutput:
    """Single-claim convenience wrapper around :func:`forward_batch`."""
    batch = GraphBatch.from_graphs([graph])
    return forward_batch(batch, params, cfg, mode, np.random.default_rng(seed))


def predict_proba(graphs: Sequence[PropagationGraph], params: dict, cfg: ModelConfig,
                  batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(graphs), batch_size):
        batch = GraphBatch.from_graphs(graphs[i:i + batch_size])
        out.append(forward_batch(batch, params, cfg, "eval").probs.value)
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def edge_weight_dump(output: ForwardOutput) -> str:
    """Tab-separated ``claim_id direction layer i j gate`` lines, node indices local to each claim."""
    lines = []
    offsets = output.batch.offsets
    ids = output.batch.claim_ids
    for rec in output.records:
        gates = rec.gate.value
        for k, (i, j) in enumerate(rec.edges):
            b = rec.owner[k]
            lines.append(f"{ids[b]}\t{rec.direction}\t{rec.layer}\t{i - offsets[b]}\t{j - offsets[b]}\t{gates[k]:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")
