"""Zorro-HiP: hierarchical perceiver blocks per stream.

A block splits its input tokens into contiguous groups, lets a set of
learned latents per group cross-attend to that group, then runs
self-attention among each group's latents. Video and audio each pass
through the block schedule; the fusion stream skips the first block and,
from then on, groups and cross-attends to the concatenation of the
previous level's ``[video | audio | fusion]`` latents.
"""

from __future__ import annotations

from .. import tensor as T
from ..rng import Rng
from ..tensor import ShapeError
from .common import (ZorroOutputs, decode_outputs, embed_audio, embed_video, fusion_tokens, init_inputs,
                     stream_pieces, stream_prefixes)
from .config import ZorroConfig
from .layers import INIT_STD, attention, block, by_stream, init_attention, init_block, init_decoder, init_mlp, init_norm, mlp, norm


def init_hip_block(p: dict, rng: Rng, name: str, d_in: int, groups: int, latents: int, channels: int,
                   n_self: int, mlp_ratio: float) -> None:
    p[f"{name}.latents"] = rng.split(name, "latents").normal((groups, latents, channels), INIT_STD)
    init_norm(p, f"{name}.ln_q", channels)
    init_norm(p, f"{name}.ln_kv", d_in)
    init_attention(p, rng, f"{name}.cross", channels, d_in, channels)
    init_norm(p, f"{name}.ln_cross_mlp", channels)
    init_mlp(p, rng, f"{name}.cross_mlp", channels, mlp_ratio)
    for s in range(n_self):
        init_block(p, rng, f"{name}.self{s}", channels, mlp_ratio)


def hip_block(x, p: dict, name: str, groups: int, n_self: int, heads: int):
    """(B, N, C_in) -> (B, groups * latents, C_out)."""
    b, n, d = x.shape
    if n % groups:
        raise ShapeError(f"{n} tokens cannot be split into {groups} groups")
    xg = x.reshape(b, groups, n // groups, d)
    lat = p[f"{name}.latents"]
    if lat.shape[0] != groups:
        raise ShapeError(f"block {name} has {lat.shape[0]} latent groups, asked for {groups}")
    z = T.broadcast_to(lat, (b,) + lat.shape)
    z = z + attention(p, f"{name}.cross", norm(z, p, f"{name}.ln_q"), norm(xg, p, f"{name}.ln_kv"), None, heads)
    z = z + mlp(norm(z, p, f"{name}.ln_cross_mlp"), p, f"{name}.cross_mlp")
    for s in range(n_self):
        z = block(z, p, f"{name}.self{s}", None, heads)
    return z.reshape(b, groups * lat.shape[1], lat.shape[2])


def init_hip(cfg: ZorroConfig, rng: Rng) -> dict:
    p: dict = {}
    init_inputs(p, rng, cfg, cfg.width, fusion_width=cfg.hip_channels[0])
    for pre in stream_prefixes(cfg):
        d_in = cfg.width
        for i, (g, k, c, n_self) in enumerate(zip(cfg.hip_groups, cfg.hip_latents, cfg.hip_channels, cfg.hip_self_layers)):
            if pre == "fusion." and i == 0:
                d_in = c
                continue
            init_hip_block(p, rng, f"{pre}hip{i}", d_in, g, k, c, n_self, cfg.mlp_ratio)
            d_in = c
        init_norm(p, f"{pre}final_ln", cfg.output_width)
    init_decoder(p, rng, "decoder", cfg.output_width, cfg.mlp_ratio, cfg.mask.n_outputs)
    return p


def hip_forward(params: dict, video, audio, cfg: ZorroConfig) -> ZorroOutputs:
    v = embed_video(params, video, cfg)
    a = embed_audio(params, audio, cfg)
    layout_in = cfg.input_layout
    f = fusion_tokens(params, v.shape[0]) if layout_in.n_fusion else None
    shared = cfg.weight_sharing == "shared"
    vpre, apre, fpre = ("", "", "") if shared else ("video.", "audio.", "fusion.")
    schedule = zip(cfg.hip_groups, cfg.hip_self_layers, cfg.hip_heads)
    for i, (g, n_self, heads) in enumerate(schedule):
        v_next = hip_block(v, params, f"{vpre}hip{i}", g, n_self, heads)
        a_next = hip_block(a, params, f"{apre}hip{i}", g, n_self, heads)
        if f is not None and i > 0:
            # before its start level the fusion stream only sees itself
            ctx = T.concat([v, a, f], axis=1) if i >= cfg.mask.fusion_start_layer else f
            f = hip_block(ctx, params, f"{fpre}hip{i}", g, n_self, heads)
        v, a = v_next, a_next
    parts = [v, a] + ([f] if f is not None else [])
    x = T.concat(parts, axis=1)
    layout = type(layout_in)(v.shape[1], a.shape[1], f.shape[1] if f is not None else 0)
    x = by_stream(lambda t, pre: norm(t, params, f"{pre}final_ln"), x, stream_pieces(cfg, layout))
    return decode_outputs(params, x, layout, cfg, cfg.hip_heads[-1])
