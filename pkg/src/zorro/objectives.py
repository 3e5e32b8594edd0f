"""Contrastive and supervised objectives, plus representation-collapse metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_TAU = 0.08


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = DEFAULT_TAU
    include_fusion_terms: bool = False
    symmetric: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def _check_pair(z_a, z_v) -> None:
    if z_a.ndim != 2 or z_a.shape != z_v.shape:
        raise ValueError(f"embedding batches must be equal (B, E) matrices, got {z_a.shape} and {z_v.shape}")
    if z_a.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")


def similarity_logits(z_a, z_v, tau: float) -> Tensor:
    """(B, B) matrix of normalised dot products over ``tau``; entry [k, j] pairs z_a^k with z_v^j."""
    za = T.l2_normalize(T.as_tensor(z_a), axis=-1)
    zv = T.l2_normalize(T.as_tensor(z_v), axis=-1)
    return T.matmul(za, zv.T) * (1.0 / tau)


def nce_loss(z_a, z_v, tau: float = DEFAULT_TAU, symmetric: bool = False) -> Tensor:
    """Audio-visual NCE loss.

    ``-sum_i log( sim(a_i, v_i) / sum_{j,k} sim(a_k, v_j) )`` with
    ``sim = exp(cos / tau)``: the denominator runs over all B^2 pairs,
    positives included, and the per-sample terms are summed.

    ``symmetric=True`` switches to the per-anchor variant (each row
    normalised over its own candidates, audio->video and video->audio
    averaged), still summed over the batch.
    """
    z_a, z_v = T.as_tensor(z_a), T.as_tensor(z_v)
    _check_pair(z_a, z_v)
    s = similarity_logits(z_a, z_v, tau)
    b = s.shape[0]
    pos = T.tsum(s * np.eye(b))
    if not symmetric:
        return T.logsumexp(s.reshape(1, b * b), axis=-1).reshape(()) * b - pos
    rows = T.tsum(T.logsumexp(s, axis=-1))
    cols = T.tsum(T.logsumexp(s, axis=0))
    return (rows + cols) * 0.5 - pos


def fusion_nce_loss(z_a, z_v, z_f, tau: float = DEFAULT_TAU, include_fusion_terms: bool = True,
                    symmetric: bool = False) -> Tensor:
    """NCE(a, v) + NCE(a, f) + NCE(v, f); just NCE(a, v) when fusion terms are off."""
    loss = nce_loss(z_a, z_v, tau, symmetric)
    if not include_fusion_terms:
        return loss
    if z_f is None:
        raise ValueError("fusion terms requested without fusion embeddings")
    return loss + nce_loss(z_a, z_f, tau, symmetric) + nce_loss(z_v, z_f, tau, symmetric)


def contrastive_loss(z_a, z_v, z_f, config: ContrastiveConfig) -> Tensor:
    return fusion_nce_loss(z_a, z_v, z_f, config.tau, config.include_fusion_terms, config.symmetric)


def supervised_loss(logits, labels, mode: str = "single") -> Tensor:
    """Mean over heads and examples.

    ``single``: softmax cross-entropy against integer class ids.
    ``multi``: sigmoid binary cross-entropy against a 0/1 (B, C) matrix,
    summed over classes per example.
    """
    heads = list(logits.values()) if isinstance(logits, dict) else list(logits)
    if not heads:
        raise ValueError("no logits given")
    labels = np.asarray(labels)
    total = None
    for z in heads:
        z = T.as_tensor(z)
        b, c = z.shape
        if mode == "single":
            if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
                raise ValueError(f"labels must be {b} class ids in [0, {c})")
            onehot = np.zeros((b, c))
            onehot[np.arange(b), labels.astype(int)] = 1.0
            term = -T.tsum(T.log_softmax(z, axis=-1) * onehot) * (1.0 / b)
        elif mode == "multi":
            if labels.shape != (b, c) or not np.isin(labels, (0, 1)).all():
                raise ValueError(f"multi-label targets must be a 0/1 matrix of shape {(b, c)}")
            # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
            term = T.tsum(T.softplus(z) - z * labels) * (1.0 / b)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        total = term if total is None else total + term
    return total * (1.0 / len(heads))


def collapse_metrics(z_a, z_v) -> dict:
    """Alignment, uniformity and top-1 cross-modal retrieval of paired embeddings.

    * alignment: mean cosine similarity of positive pairs
    * uniformity: log mean exp(-2 ||a_i - v_j||^2) over negative pairs i != j,
      on normalised embeddings
    * top1_retrieval: fraction of audio rows whose most similar video row is
      their own pair (ties go to the lowest index)
    """
    za = np.asarray(getattr(z_a, "data", z_a), dtype=np.float64)
    zv = np.asarray(getattr(z_v, "data", z_v), dtype=np.float64)
    if za.shape != zv.shape or za.shape[0] < 2:
        raise ValueError("need two equal batches of at least 2 embeddings")
    za = za / np.linalg.norm(za, axis=1, keepdims=True)
    zv = zv / np.linalg.norm(zv, axis=1, keepdims=True)
    sim = za @ zv.T
    b = sim.shape[0]
    off = ~np.eye(b, dtype=bool)
    sq = np.maximum(2.0 - 2.0 * sim[off], 0.0)
    return {
        "alignment": float(np.mean(np.diag(sim))),
        "uniformity": float(np.log(np.mean(np.exp(-2.0 * sq)))),
        "top1_retrieval": float(np.mean(np.argmax(sim, axis=1) == np.arange(b))),
    }
