"""Shared building blocks: patch embedding, masked attention, MLPs, decoder.

Parameters are flat ``name -> Tensor`` dicts. Initialisers take a
:class:`~zorro.rng.Rng` and derive one sub-stream per parameter name, so a
parameter's initial value does not depend on creation order.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..masking import OUTPUT_NAMES
from ..rng import Rng
from ..tensor import ShapeError, Tensor

INIT_STD = 0.02


# ---------------------------------------------------------------------------
# initialisers


def init_linear(params: dict, rng: Rng, name: str, d_in: int, d_out: int, std: float | None = None) -> None:
    std = (1.0 / np.sqrt(d_in)) if std is None else std
    params[f"{name}.w"] = rng.split(name, "w").normal((d_in, d_out), std)
    params[f"{name}.b"] = np.zeros(d_out)


def init_norm(params: dict, name: str, d: int) -> None:
    params[f"{name}.g"] = np.ones(d)
    params[f"{name}.b"] = np.zeros(d)


def init_attention(params: dict, rng: Rng, name: str, d_q: int, d_kv: int | None = None, d_model: int | None = None) -> None:
    d_kv = d_q if d_kv is None else d_kv
    d_model = d_q if d_model is None else d_model
    init_linear(params, rng, f"{name}.q", d_q, d_model)
    init_linear(params, rng, f"{name}.k", d_kv, d_model)
    init_linear(params, rng, f"{name}.v", d_kv, d_model)
    init_linear(params, rng, f"{name}.o", d_model, d_model)


def init_mlp(params: dict, rng: Rng, name: str, d: int, ratio: float) -> None:
    hidden = int(round(d * ratio))
    init_linear(params, rng, f"{name}.fc1", d, hidden)
    init_linear(params, rng, f"{name}.fc2", hidden, d)


def init_block(params: dict, rng: Rng, name: str, d: int, mlp_ratio: float) -> None:
    """Pre-norm transformer block: LN -> attention -> residual, LN -> MLP -> residual."""
    init_norm(params, f"{name}.ln1", d)
    init_attention(params, rng, f"{name}.attn", d)
    init_norm(params, f"{name}.ln2", d)
    init_mlp(params, rng, f"{name}.mlp", d, mlp_ratio)


def init_decoder(params: dict, rng: Rng, name: str, d: int, mlp_ratio: float, n_outputs: int) -> None:
    for out in OUTPUT_NAMES[:n_outputs]:
        params[f"{name}.query.{out}"] = rng.split(name, "query", out).normal((d,), INIT_STD)
    init_norm(params, f"{name}.ln_q", d)
    init_norm(params, f"{name}.ln_kv", d)
    init_attention(params, rng, f"{name}.attn", d)
    init_norm(params, f"{name}.ln2", d)
    init_mlp(params, rng, f"{name}.mlp", d, mlp_ratio)


# ---------------------------------------------------------------------------
# forward pieces


def linear(x, p: dict, name: str) -> Tensor:
    return T.matmul(x, p[f"{name}.w"]) + p[f"{name}.b"]


def norm(x, p: dict, name: str) -> Tensor:
    return T.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def by_stream(fn, x, pieces):
    """Apply ``fn(x_piece, prefix)`` per token stream and re-join along tokens.

    ``pieces`` is a list of ``(slice, prefix)``. A single piece covering all
    tokens means shared weights and skips the split.
    """
    if len(pieces) == 1 and pieces[0][0] is None:
        return fn(x, pieces[0][1])
    parts = [fn(x[..., sl, :], prefix) for sl, prefix in pieces]
    return T.concat(parts, axis=-2)


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    if d % heads:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    x = x.reshape(*lead, n, heads, d // heads)
    return T.swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return x.reshape(*lead, n, h * dh)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention with a 0/1 mask.

    ``q``: (..., Nq, D), ``k``/``v``: (..., Nk, D). ``mask`` (Nq, Nk) or any
    shape broadcasting to (..., heads, Nq, Nk); ``None`` means unmasked.
    """
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / np.sqrt(qh.shape[-1])
    logits = T.matmul(qh, T.swapaxes(kh, -1, -2)) * scale
    if mask is None:
        weights = T.softmax(logits)
    else:
        weights = T.softmax_masked(logits, mask)
    return merge_heads(T.matmul(weights, vh))


def attention(p: dict, name: str, xq, xkv, mask, heads: int, q_pieces=None, kv_pieces=None) -> Tensor:
    """Project, attend, project back. Pieces select per-stream weights."""
    q_pieces = q_pieces or [(None, "")]
    kv_pieces = kv_pieces or [(None, "")]
    q = by_stream(lambda t, pre: linear(t, p, f"{pre}{name}.q"), xq, q_pieces)
    k = by_stream(lambda t, pre: linear(t, p, f"{pre}{name}.k"), xkv, kv_pieces)
    v = by_stream(lambda t, pre: linear(t, p, f"{pre}{name}.v"), xkv, kv_pieces)
    o = masked_attention(q, k, v, mask, heads)
    return by_stream(lambda t, pre: linear(t, p, f"{pre}{name}.o"), o, q_pieces)


def mlp(x, p: dict, name: str) -> Tensor:
    return linear(T.gelu(linear(x, p, f"{name}.fc1")), p, f"{name}.fc2")


def block(x, p: dict, name: str, mask, heads: int, pieces=None) -> Tensor:
    """Pre-norm self-attention block; ``pieces`` gives per-stream weights."""
    pieces = pieces or [(None, "")]
    h = by_stream(lambda t, pre: norm(t, p, f"{pre}{name}.ln1"), x, pieces)
    x = x + attention(p, f"{name}.attn", h, h, mask, heads, pieces, pieces)
    h = by_stream(lambda t, pre: norm(t, p, f"{pre}{name}.ln2"), x, pieces)
    return x + by_stream(lambda t, pre: mlp(t, p, f"{pre}{name}.mlp"), h, pieces)


def decode(p: dict, name: str, tokens, mask, heads: int, n_outputs: int) -> Tensor:
    """Learned queries cross-attend to final tokens; returns (B, n_outputs, D)."""
    queries = T.concat([p[f"{name}.query.{o}"].reshape(1, -1) for o in OUTPUT_NAMES[:n_outputs]], axis=0)
    batch = tokens.shape[0]
    q = T.broadcast_to(queries, (batch,) + queries.shape)
    kv = norm(tokens, p, f"{name}.ln_kv")
    out = q + attention(p, f"{name}.attn", norm(q, p, f"{name}.ln_q"), kv, mask, heads)
    return out + mlp(norm(out, p, f"{name}.ln2"), p, f"{name}.mlp")


# ---------------------------------------------------------------------------
# patches


def patch_grid(dims, patch) -> tuple:
    dims, patch = tuple(dims), tuple(patch)
    if len(dims) != len(patch):
        raise ShapeError(f"patch {patch} does not match input dims {dims}")
    bad = [(d, s) for d, s in zip(dims, patch) if s < 1 or d % s]
    if bad:
        raise ShapeError(f"input dims {dims} not divisible by patch sizes {patch}")
    return tuple(d // s for d, s in zip(dims, patch))


def extract_patches(x, patch) -> Tensor:
    """Non-overlapping patches, raster order over the patch grid.

    ``x``: (B, *spatial, C) with ``len(patch) == len(spatial)``; returns
    (B, n_patches, prod(patch) * C). Same result as a stride-``patch``
    convolution's receptive fields.
    """
    x = T.as_tensor(x)
    b, *spatial, c = x.shape
    grid = patch_grid(spatial, patch)
    k = len(spatial)
    split = [b]
    for g, s in zip(grid, patch):
        split += [g, s]
    split.append(c)
    x = x.reshape(*split)
    order = [0] + [1 + 2 * i for i in range(k)] + [2 + 2 * i for i in range(k)] + [2 * k + 1]
    x = x.transpose(*order)
    return x.reshape(b, int(np.prod(grid)), int(np.prod(patch)) * c)


def embed_patches(x, p: dict, name: str, patch) -> Tensor:
    """Patch projection plus learned absolute position embedding."""
    return linear(extract_patches(x, patch), p, f"{name}.proj") + p[f"{name}.pos"]
