"""Classifier heads (one per decoded output) and contrastive projectors."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..rng import Rng
from .layers import init_linear, linear

PROJECTOR_HIDDEN = 512  # full-scale hidden width; toy configs pass their own


def init_heads(params: dict, rng: Rng, outputs, width: int, n_classes: int) -> None:
    for name in outputs:
        init_linear(params, rng, f"head.{name}", width, n_classes)


def classifier_heads(outputs: dict, params: dict, mode: str = "single"):
    """Per-head logits and the head-averaged class probabilities.

    ``outputs`` maps output name -> (B, D). Probabilities are softmax for
    ``single`` and elementwise sigmoid for ``multi``; the prediction is
    their plain mean over heads.
    """
    logits = {name: linear(o, params, f"head.{name}") for name, o in outputs.items()}
    squash = T.softmax if mode == "single" else T.sigmoid
    probs = [squash(z) for z in logits.values()]
    avg = probs[0]
    for pr in probs[1:]:
        avg = avg + pr
    return logits, avg * (1.0 / len(probs))


def init_projectors(params: dict, rng: Rng, names, width: int, hidden: int, embed: int) -> None:
    for name in names:
        init_linear(params, rng, f"proj.{name}.fc1", width, hidden)
        init_linear(params, rng, f"proj.{name}.fc2", hidden, embed)


def project(x, params: dict, name: str):
    """Two-layer MLP g(x) = W2 gelu(W1 x + b1) + b2."""
    return linear(T.gelu(linear(x, params, f"proj.{name}.fc1")), params, f"proj.{name}.fc2")
