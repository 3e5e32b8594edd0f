"""Zorro-Swin: windowed attention per modality, fusion fed by cross-attention.

Video (3-D token grid) and audio (2-D token grid) each go through Swin
blocks. Windows shift by half a window on every odd layer (the usual
cyclic-shift formulation, with a mask separating wrapped regions). After
the unimodal blocks of a layer, the fusion tokens cross-attend to
``[video | audio | fusion]`` and then run a full self-attention block.
Nothing flows from fusion back into the unimodal streams.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import tensor as T
from ..rng import Rng
from ..tensor import ShapeError
from .common import (ZorroOutputs, decode_outputs, embed_audio, embed_video, fusion_tokens, init_inputs,
                     stream_pieces, stream_prefixes)
from .config import ZorroConfig
from .layers import attention, block, by_stream, init_attention, init_block, init_decoder, init_mlp, init_norm, mlp, norm


@lru_cache(maxsize=None)
def window_partition(grid: tuple, window: tuple, shift: tuple):
    """Token permutation into windows and the per-window attention mask.

    Returns ``(perm, mask)``: ``perm[k]`` is the raster index of the token
    placed at position ``k`` of the windowed order (windows contiguous);
    ``mask`` has shape (n_windows, w, w), or is None when nothing is shifted.
    """
    if len(grid) != len(window) or len(grid) != len(shift):
        raise ShapeError(f"grid {grid}, window {window} and shift {shift} must have equal rank")
    for g, w, s in zip(grid, window, shift):
        if w < 1 or g % w:
            raise ShapeError(f"token grid {grid} not divisible by window {window}")
        if not 0 <= s < w:
            raise ShapeError(f"shift {shift} must lie in [0, window)")
    coords = np.indices(grid).reshape(len(grid), -1).T
    rolled = (coords - np.asarray(shift)) % np.asarray(grid)
    win = rolled // np.asarray(window)
    offset = rolled % np.asarray(window)
    n_win = tuple(g // w for g, w in zip(grid, window))
    win_id = np.ravel_multi_index(win.T, n_win)
    off_id = np.ravel_multi_index(offset.T, window)
    perm = np.lexsort((off_id, win_id))
    if not any(shift):
        return perm, None

    labels = np.zeros_like(rolled)
    for ax, (g, w, s) in enumerate(zip(grid, window, shift)):
        if s:
            c = rolled[:, ax]
            labels[:, ax] = np.where(c < g - w, 0, np.where(c < g - s, 1, 2))
    lab = np.ravel_multi_index(labels.T, (3,) * len(grid))[perm]
    wsize = int(np.prod(window))
    lab = lab.reshape(-1, wsize)
    mask = (lab[:, :, None] == lab[:, None, :]).astype(np.int8)
    return perm, mask


def layer_shift(grid: tuple, window: tuple, layer: int) -> tuple:
    if layer % 2 == 0:
        return (0,) * len(grid)
    return tuple(0 if w >= g else w // 2 for g, w in zip(grid, window))


def window_block(x, p: dict, name: str, grid: tuple, window: tuple, shift: tuple, heads: int):
    """Swin block on (B, N, D) tokens laid out in raster order over ``grid``."""
    perm, mask = window_partition(tuple(grid), tuple(window), tuple(shift))
    inv = np.argsort(perm)
    b, n, d = x.shape
    n_win = n // int(np.prod(window))
    h = norm(x, p, f"{name}.ln1")
    hw = T.take(h, perm, axis=1).reshape(b, n_win, n // n_win, d)
    wmask = None if mask is None else mask[:, None, :, :]
    a = attention(p, f"{name}.attn", hw, hw, wmask, heads)
    x = x + T.take(a.reshape(b, n, d), inv, axis=1)
    return x + mlp(norm(x, p, f"{name}.ln2"), p, f"{name}.mlp")


def _check_windows(cfg: ZorroConfig) -> None:
    for grid, window in ((cfg.video_grid, cfg.video_window), (cfg.audio_grid, cfg.audio_window)):
        if len(grid) != len(window) or any(g % w for g, w in zip(grid, window)):
            raise ShapeError(f"token grid {grid} not divisible by window {window}")


def _unimodal_prefixes(cfg: ZorroConfig) -> tuple:
    if cfg.weight_sharing == "shared":
        return "swin.", "swin."
    return "video.swin.", "audio.swin."


def init_swin(cfg: ZorroConfig, rng: Rng) -> dict:
    _check_windows(cfg)
    p: dict = {}
    d = cfg.width
    init_inputs(p, rng, cfg, d)
    for pre in sorted(set(_unimodal_prefixes(cfg))):
        for layer in range(cfg.layers):
            init_block(p, rng, f"{pre}block{layer}", d, cfg.mlp_ratio)
    if cfg.fusion_tokens:
        for layer in range(cfg.layers):
            name = f"fusion{layer}"
            init_norm(p, f"{name}.cross_ln_q", d)
            init_norm(p, f"{name}.cross_ln_kv", d)
            init_attention(p, rng, f"{name}.cross", d)
            init_norm(p, f"{name}.cross_ln2", d)
            init_mlp(p, rng, f"{name}.cross_mlp", d, cfg.mlp_ratio)
            init_block(p, rng, f"{name}.self", d, cfg.mlp_ratio)
    for pre in stream_prefixes(cfg):
        init_norm(p, f"{pre}final_ln", d)
    init_decoder(p, rng, "decoder", d, cfg.mlp_ratio, cfg.mask.n_outputs)
    return p


def fusion_update(f, v, a, p: dict, name: str, heads: int, active: bool):
    """Cross-attend fusion tokens to all streams, then self-attend among them."""
    if active:
        ctx = T.concat([v, a, f], axis=1)
        q = norm(f, p, f"{name}.cross_ln_q")
        f = f + attention(p, f"{name}.cross", q, norm(ctx, p, f"{name}.cross_ln_kv"), None, heads)
        f = f + mlp(norm(f, p, f"{name}.cross_ln2"), p, f"{name}.cross_mlp")
    return block(f, p, f"{name}.self", None, heads)


def swin_forward(params: dict, video, audio, cfg: ZorroConfig) -> ZorroOutputs:
    _check_windows(cfg)
    v = embed_video(params, video, cfg)
    a = embed_audio(params, audio, cfg)
    layout = cfg.input_layout
    f = fusion_tokens(params, v.shape[0]) if layout.n_fusion else None
    vpre, apre = _unimodal_prefixes(cfg)
    for layer in range(cfg.layers):
        v = window_block(v, params, f"{vpre}block{layer}", cfg.video_grid, cfg.video_window,
                         layer_shift(cfg.video_grid, cfg.video_window, layer), cfg.heads)
        a = window_block(a, params, f"{apre}block{layer}", cfg.audio_grid, cfg.audio_window,
                         layer_shift(cfg.audio_grid, cfg.audio_window, layer), cfg.heads)
        if f is not None:
            active = layer >= cfg.mask.fusion_start_layer
            f = fusion_update(f, v, a, params, f"fusion{layer}", cfg.heads, active)
    x = T.concat([v, a] + ([f] if f is not None else []), axis=1)
    x = by_stream(lambda t, pre: norm(t, params, f"{pre}final_ln"), x, stream_pieces(cfg, layout))
    return decode_outputs(params, x, layout, cfg, cfg.heads)
