"""Zorro-ViT: one token sequence, modality routing done purely by masks."""

from __future__ import annotations

from .. import tensor as T
from ..masking import build_self_mask
from ..rng import Rng
from .common import (ZorroOutputs, decode_outputs, embed_audio, embed_video, fusion_tokens, init_inputs,
                     stream_pieces, stream_prefixes)
from .config import ZorroConfig
from .layers import block, by_stream, init_block, init_decoder, init_norm, norm


def init_vit(cfg: ZorroConfig, rng: Rng) -> dict:
    p: dict = {}
    d = cfg.width
    init_inputs(p, rng, cfg, d)
    for pre in stream_prefixes(cfg):
        for layer in range(cfg.layers):
            init_block(p, rng, f"{pre}block{layer}", d, cfg.mlp_ratio)
        init_norm(p, f"{pre}final_ln", d)
    init_decoder(p, rng, "decoder", d, cfg.mlp_ratio, cfg.mask.n_outputs)
    return p


def vit_encode(params: dict, video, audio, cfg: ZorroConfig):
    """Final token states (B, N, D) and their layout."""
    parts = [embed_video(params, video, cfg), embed_audio(params, audio, cfg)]
    layout = cfg.input_layout
    if layout.n_fusion:
        parts.append(fusion_tokens(params, parts[0].shape[0]))
    x = T.concat(parts, axis=1)
    pieces = stream_pieces(cfg, layout)
    for layer in range(cfg.layers):
        mask = build_self_mask(layout, cfg.mask, layer)
        x = block(x, params, f"block{layer}", mask, cfg.heads, pieces)
    x = by_stream(lambda t, pre: norm(t, params, f"{pre}final_ln"), x, pieces)
    return x, layout


def vit_forward(params: dict, video, audio, cfg: ZorroConfig) -> ZorroOutputs:
    x, layout = vit_encode(params, video, audio, cfg)
    return decode_outputs(params, x, layout, cfg, cfg.heads)
