"""Edge-enhanced Bayesian graph convolutional networks for rumor-cascade classification."""

from .cascade import (
    FOUR_CLASS,
    THREE_CLASS,
    Claim,
    Dataset,
    LabelSet,
    PropagationGraph,
    TweetNode,
    build_graph,
    load_claims,
    truncate_claim,
    write_claims,
)
from .datagen import GenConfig, generate, perturb_edges
from .model import ModelConfig, forward, init_params
from .train import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "FOUR_CLASS",
    "THREE_CLASS",
    "Claim",
    "Dataset",
    "LabelSet",
    "PropagationGraph",
    "TweetNode",
    "build_graph",
    "load_claims",
    "truncate_claim",
    "write_claims",
    "GenConfig",
    "generate",
    "perturb_edges",
    "ModelConfig",
    "forward",
    "init_params",
    "TrainConfig",
    "fit",
]
