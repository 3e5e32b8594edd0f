"""Zorro-ViT, Zorro-Swin and Zorro-HiP forward passes."""

from __future__ import annotations

from ..rng import Rng
from ..tensor import Tensor
from .common import ZorroOutputs
from .config import ModelConfigError, ZorroConfig
from .heads import classifier_heads, init_heads, init_projectors, project
from .hip import hip_forward, init_hip
from .layers import extract_patches
from .swin import init_swin, swin_forward
from .vit import init_vit, vit_encode, vit_forward

_INIT = {"vit": init_vit, "swin": init_swin, "hip": init_hip}
_FORWARD = {"vit": vit_forward, "swin": swin_forward, "hip": hip_forward}


def init_params(cfg: ZorroConfig, rng: Rng) -> dict:
    """Backbone parameters as ``name -> ndarray``."""
    return _INIT[cfg.arch](cfg, rng.split("backbone"))


def forward(params: dict, video, audio, cfg: ZorroConfig) -> ZorroOutputs:
    """Run the configured architecture. ``params`` may hold arrays or Tensors."""
    params = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    return _FORWARD[cfg.arch](params, video, audio, cfg)


def patchify(x, patch):
    """Raw patches (B, n_patches, patch_volume * channels) of a batched input."""
    return extract_patches(x, patch)


__all__ = [
    "ModelConfigError", "ZorroConfig", "ZorroOutputs", "classifier_heads", "forward", "hip_forward",
    "init_heads", "init_hip", "init_params", "init_projectors", "init_swin", "init_vit", "patchify",
    "project", "swin_forward", "vit_encode", "vit_forward",
]
