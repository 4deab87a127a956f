"""
Edge gates and gradient checking
================================

Every edge of a cascade is rescaled by a gate: the sum over T latent
relation types of sigmoid(relation logit). With all edge parameters at
zero each sigmoid is 1/2, so the gate is T/2. Trained gates move away from
that, shrinking edges between dissimilar tweets.

The second half runs the central-difference gradient check on the full
training loss of a small claim.
"""

import time

import numpy as np

from ebgcn import autodiff as ad
from ebgcn.cascade import build_graph
from ebgcn.datagen import GenConfig, generate
from ebgcn.model import GraphBatch, ModelConfig, edge_weight_dump, forward, forward_batch, init_params
from ebgcn.objective import objective

data = generate(GenConfig(claims_per_class=2, min_nodes=6, max_nodes=6, dim=8, seed=3))
claim = data.dataset.claims[0]
graph = build_graph(claim, data.matrices()[0])

for T in (2, 3):
    cfg = ModelConfig(in_dim=8, num_classes=4, hidden=16, relations=T)
    params = init_params(cfg, seed=0)
    for k in params:
        if k.startswith("edge"):
            params[k][...] = 0.0
    out = forward(graph, params, cfg)
    print(f"T={T}, zero edge parameters: gates {np.unique(out.records[0].gate.value)}")

# With random parameters the gates spread out; the dump lists every one.
cfg = ModelConfig(in_dim=8, num_classes=4, hidden=16, relations=3)
params = init_params(cfg, seed=0)
print("\nfirst gates with random parameters:")
print(edge_weight_dump(forward(graph, params, cfg)).splitlines()[:5])

# Gradient check: the same fixed seed gives the same posterior noise on every call.
batch = GraphBatch.from_graphs([graph])


def loss_fn(tape, pv):
    out = forward_batch(batch, pv, cfg, "train", np.random.default_rng(0), tape)
    return objective(out, np.array([0]), 0.3)[0]


t0 = time.perf_counter()
report = ad.finite_difference_check(loss_fn, params, h=1e-5, tol=1e-5, replay=True)
print(f"\n{report}\n({time.perf_counter() - t0:.1f}s)")
