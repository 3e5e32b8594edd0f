"""Model configuration shared by the three architectures."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..masking import MaskConfig, StreamLayout
from .layers import patch_grid

ARCHS = ("vit", "swin", "hip")
WEIGHT_SHARING = ("shared", "per_stream")


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ZorroConfig:
    """Toy-scale defaults; see :meth:`full_scale_vit` for the full-size ViT."""

    arch: str = "vit"
    width: int = 32
    layers: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    video_shape: tuple = (2, 8, 8, 1)  # frames, height, width, channels
    audio_shape: tuple = (8, 8)  # time steps, spectrogram bins
    video_patch: tuple = (1, 4, 4)
    audio_patch: tuple = (4, 4)
    n_fusion: int = 2
    mask: MaskConfig = field(default_factory=MaskConfig)
    weight_sharing: str = "shared"
    # swin: window sizes in token-grid units
    video_window: tuple = (2, 2, 2)
    audio_window: tuple = (2, 2)
    # hip: one entry per block
    hip_groups: tuple = (2, 1, 1)
    hip_latents: tuple = (4, 4, 4)
    hip_channels: tuple = (32, 32, 32)
    hip_self_layers: tuple = (1, 1, 1)
    hip_heads: tuple = (4, 4, 4)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ModelConfigError(f"unknown arch {self.arch!r}")
        if self.weight_sharing not in WEIGHT_SHARING:
            raise ModelConfigError(f"unknown weight_sharing {self.weight_sharing!r}")
        if self.width % self.heads:
            raise ModelConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ModelConfigError("need at least one layer")
        patch_grid(self.video_shape[:3], self.video_patch)
        patch_grid(self.audio_shape, self.audio_patch)
        if self.arch == "hip":
            n = len(self.hip_groups)
            lens = {len(self.hip_latents), len(self.hip_channels), len(self.hip_self_layers), len(self.hip_heads)}
            if lens != {n}:
                raise ModelConfigError("hip schedule tuples must have equal length")
            for c, h in zip(self.hip_channels, self.hip_heads):
                if c % h:
                    raise ModelConfigError(f"hip channels {c} not divisible by heads {h}")
        if self.arch in ("swin", "hip") and self.mask.kind not in ("zorro", "two_streams"):
            raise ModelConfigError(f"{self.arch} supports only zorro and two_streams masking")
        self.mask.validate(self.depth)
        if self.mask.has_fusion and self.n_fusion < 1:
            raise ModelConfigError(f"{self.mask.kind} masking needs n_fusion >= 1")

    @classmethod
    def full_scale_vit(cls) -> "ZorroConfig":
        """ViT-B/16 sizes used for the full-scale model (8 frames of 224x224, 128 mel bins)."""
        return cls(
            arch="vit", width=768, layers=12, heads=12, mlp_ratio=4.0,
            video_shape=(8, 224, 224, 3), audio_shape=(256, 128),
            video_patch=(1, 16, 16), audio_patch=(16, 16), n_fusion=6,
        )

    @classmethod
    def toy(cls, arch: str = "vit", **kw) -> "ZorroConfig":
        """Desk-scale defaults per architecture.

        Swin gets finer patches (token grids 2x4x4 and 4x4) so that its 2x2x2
        and 2x2 windows are smaller than the grid and shifting happens.
        """
        if arch == "swin":
            kw = {"video_patch": (1, 2, 2), "audio_patch": (2, 2)} | kw
        return cls(arch=arch, **kw)

    def with_mask(self, kind: str, **kw) -> "ZorroConfig":
        return replace(self, mask=MaskConfig(kind, **kw))

    @property
    def depth(self) -> int:
        """Number of fusion-capable layers (blocks for HiP)."""
        return len(self.hip_groups) if self.arch == "hip" else self.layers

    @property
    def video_grid(self) -> tuple:
        return patch_grid(self.video_shape[:3], self.video_patch)

    @property
    def audio_grid(self) -> tuple:
        return patch_grid(self.audio_shape, self.audio_patch)

    @property
    def fusion_tokens(self) -> int:
        return self.n_fusion if self.mask.has_fusion else 0

    @property
    def input_layout(self) -> StreamLayout:
        return StreamLayout(int(np.prod(self.video_grid)), int(np.prod(self.audio_grid)), self.fusion_tokens)

    @property
    def output_width(self) -> int:
        return self.hip_channels[-1] if self.arch == "hip" else self.width

    @property
    def output_names(self) -> tuple:
        return ("video", "audio", "fusion", "global")[: self.mask.n_outputs]
