"""Input embedding, stream bookkeeping and the output container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..masking import StreamLayout, build_decoder_mask
from ..rng import Rng
from ..tensor import ShapeError, Tensor
from .config import ZorroConfig
from .layers import INIT_STD, decode, embed_patches, init_linear


@dataclass
class ZorroOutputs:
    """Decoded vectors, each (B, D). ``o_f``/``o_g`` are None for two_streams."""

    o_v: Tensor
    o_a: Tensor
    o_f: Tensor | None = None
    o_g: Tensor | None = None
    tokens: Tensor | None = None
    layout: StreamLayout | None = None

    def as_dict(self) -> dict:
        out = {"video": self.o_v, "audio": self.o_a, "fusion": self.o_f, "global": self.o_g}
        return {k: v for k, v in out.items() if v is not None}


def init_inputs(params: dict, rng: Rng, cfg: ZorroConfig, width: int, fusion_width: int | None = None) -> None:
    pv = int(np.prod(cfg.video_patch)) * cfg.video_shape[3]
    pa = int(np.prod(cfg.audio_patch))
    init_linear(params, rng, "embed.video.proj", pv, width)
    init_linear(params, rng, "embed.audio.proj", pa, width)
    params["embed.video.pos"] = rng.split("embed.video.pos").normal((cfg.input_layout.n_video, width), INIT_STD)
    params["embed.audio.pos"] = rng.split("embed.audio.pos").normal((cfg.input_layout.n_audio, width), INIT_STD)
    if cfg.fusion_tokens:
        params["fusion.tokens"] = rng.split("fusion.tokens").normal((cfg.n_fusion, fusion_width or width), INIT_STD)


def as_batch(x, sample_ndim: int, what: str) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == sample_ndim:
        x = x.reshape(1, *x.shape)
    if x.ndim != sample_ndim + 1:
        raise ShapeError(f"{what} must have {sample_ndim} (+batch) dims, got shape {x.shape}")
    return x


def embed_video(params: dict, video, cfg: ZorroConfig) -> Tensor:
    video = as_batch(video, 4, "video")
    if tuple(video.shape[1:]) != tuple(cfg.video_shape):
        raise ShapeError(f"video shape {video.shape[1:]} != configured {cfg.video_shape}")
    return embed_patches(video, params, "embed.video", cfg.video_patch)


def embed_audio(params: dict, audio, cfg: ZorroConfig) -> Tensor:
    audio = as_batch(audio, 2, "audio")
    if tuple(audio.shape[1:]) != tuple(cfg.audio_shape):
        raise ShapeError(f"audio shape {audio.shape[1:]} != configured {cfg.audio_shape}")
    return embed_patches(audio.reshape(*audio.shape, 1), params, "embed.audio", cfg.audio_patch)


def fusion_tokens(params: dict, batch: int) -> Tensor:
    f = params["fusion.tokens"]
    return T.broadcast_to(f, (batch,) + f.shape)


def stream_pieces(cfg: ZorroConfig, layout: StreamLayout) -> list:
    if cfg.weight_sharing == "shared":
        return [(None, "")]
    pieces = [(layout.video, "video."), (layout.audio, "audio.")]
    if layout.n_fusion:
        pieces.append((layout.fusion, "fusion."))
    return pieces


def stream_prefixes(cfg: ZorroConfig) -> list:
    if cfg.weight_sharing == "shared":
        return [""]
    return ["video.", "audio."] + (["fusion."] if cfg.fusion_tokens else [])


def decode_outputs(params: dict, tokens: Tensor, layout: StreamLayout, cfg: ZorroConfig, heads: int) -> ZorroOutputs:
    mask = build_decoder_mask(layout, cfg.mask)
    out = decode(params, "decoder", tokens, mask, heads, cfg.mask.n_outputs)
    named = [out[:, i, :] for i in range(cfg.mask.n_outputs)]
    if len(named) == 2:
        return ZorroOutputs(named[0], named[1], tokens=tokens, layout=layout)
    return ZorroOutputs(named[0], named[1], named[2], named[3], tokens=tokens, layout=layout)
