"""
Training on synthetic cascades and rewiring the test set
========================================================

Train the edge-gated model and the gate-free ablation on a small
synthetic dataset, then rewire a growing share of test edges and watch
both accuracies. This is a scaled-down version of the robustness
experiment (fewer claims, a short epoch budget), so the numbers are
noisy; the point is the mechanics.
"""

import math

from ebgcn.datagen import GenConfig
from ebgcn.evaluation import (
    Budget,
    RobustnessConfig,
    early_detection_curve,
    make_fixture,
    robustness_experiment,
)
from ebgcn.train import TrainConfig

gen = GenConfig(claims_per_class=40, seed=7)
fx = make_fixture(gen)
print(f"{len(fx.train)} train / {len(fx.val)} validation / {len(fx.test)} test claims")

train_cfg = TrainConfig(max_epochs=40, hidden=32, learning_rate=2e-3)
models = {}
report = robustness_experiment(
    RobustnessConfig(gen, train_cfg, rhos=(0.0, 0.2, 0.4), seeds=(0,)),
    fx,
    on_result=lambda name, seed, res: models.setdefault(name, res),
)
for rho in (0.0, 0.2, 0.4):
    print(f"rho={rho:.1f}  ebgcn {report.mean_accuracy('ebgcn', rho):.3f}"
          f"  ablation {report.mean_accuracy('ablation', rho):.3f}")

# How early can the trained model call it?
res = models["ebgcn"]
test = fx.dataset.subset(fx.test)
curve = early_detection_curve(res.params, res.model_config, test, fx.feature_of,
                              [Budget("tweets", k) for k in (1, 2, 4, 8)] + [Budget("tweets", math.inf)])
for budget, rep in curve:
    print(f"{budget.label():>12}: accuracy {rep.accuracy:.3f}")
