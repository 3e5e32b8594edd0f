"""Token-stream layouts and attention masks.

Convention used throughout: ``mask[i, j] == 1`` means query ``i`` may attend
to key ``j``, i.e. information flows from token ``j`` into token ``i``.
Tokens are always ordered ``[video | audio | fusion]``.

Masking kinds:

* ``zorro`` -- video and audio attend only to themselves, fusion attends to
  everything.
* ``two_streams`` -- video and audio are disconnected; no fusion tokens.
* ``input_level`` -- no masking at all.
* ``bottleneck`` -- zorro plus unimodal queries may read fusion keys, which
  lets information cross modalities through the fusion tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("zorro", "two_streams", "input_level", "bottleneck")

VIDEO, AUDIO, FUSION = "video", "audio", "fusion"

# decoder query order
OUTPUT_NAMES = ("video", "audio", "fusion", "global")


class MaskConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StreamLayout:
    n_video: int
    n_audio: int
    n_fusion: int = 0

    def __post_init__(self):
        if self.n_video < 1 or self.n_audio < 1 or self.n_fusion < 0:
            raise MaskConfigError(f"invalid layout {self}")

    @property
    def total(self) -> int:
        return self.n_video + self.n_audio + self.n_fusion

    @property
    def video(self) -> slice:
        return slice(0, self.n_video)

    @property
    def audio(self) -> slice:
        return slice(self.n_video, self.n_video + self.n_audio)

    @property
    def fusion(self) -> slice:
        return slice(self.n_video + self.n_audio, self.total)

    def stream_of(self, index: int) -> str:
        if not 0 <= index < self.total:
            raise IndexError(f"token {index} outside layout of {self.total}")
        if index < self.n_video:
            return VIDEO
        if index < self.n_video + self.n_audio:
            return AUDIO
        return FUSION

    def stream_ids(self) -> np.ndarray:
        """0 for video, 1 for audio, 2 for fusion, per token."""
        return np.repeat([0, 1, 2], [self.n_video, self.n_audio, self.n_fusion])

    def without_fusion(self) -> "StreamLayout":
        return StreamLayout(self.n_video, self.n_audio, 0)


@dataclass(frozen=True)
class MaskConfig:
    kind: str = "zorro"
    fusion_start_layer: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MaskConfigError(f"unknown mask kind {self.kind!r}; expected one of {KINDS}")
        if self.fusion_start_layer < 0:
            raise MaskConfigError("fusion_start_layer must be non-negative")

    @property
    def has_fusion(self) -> bool:
        return self.kind != "two_streams"

    @property
    def n_outputs(self) -> int:
        return 2 if self.kind == "two_streams" else 4

    def validate(self, n_layers: int) -> None:
        if not 0 <= self.fusion_start_layer < n_layers:
            raise MaskConfigError(f"fusion_start_layer={self.fusion_start_layer} outside [0, {n_layers})")


def _check_kind(config: MaskConfig) -> None:
    # guards against configs built by bypassing __post_init__
    if config.kind not in KINDS:
        raise MaskConfigError(f"unknown mask kind {config.kind!r}")


def build_self_mask(layout: StreamLayout, config: MaskConfig, layer: int = 0) -> np.ndarray:
    """Square 0/1 self-attention mask of side ``layout.total`` for one layer."""
    _check_kind(config)
    n = layout.total
    v, a, f = layout.video, layout.audio, layout.fusion
    m = np.zeros((n, n), dtype=np.int8)

    if config.kind == "input_level":
        m[:] = 1
        return m

    m[v, v] = 1
    m[a, a] = 1
    if layout.n_fusion == 0:
        return m

    if config.kind == "two_streams":
        m[f, f] = 1
        return m

    if layer < config.fusion_start_layer:
        # fusion tokens exist but stay inert until their start layer
        m[f, f] = 1
        return m

    m[f, :] = 1
    if config.kind == "bottleneck":
        m[v, f] = 1
        m[a, f] = 1
    return m


def build_decoder_mask(layout: StreamLayout, config: MaskConfig) -> np.ndarray:
    """Cross-attention mask for the output queries.

    Rows are ordered (video, audio, fusion, global); only the first two exist
    for ``two_streams``.
    """
    _check_kind(config)
    rows = config.n_outputs
    if rows == 4 and layout.n_fusion == 0:
        raise MaskConfigError("fusion output requested but the layout has no fusion tokens")
    m = np.zeros((rows, layout.total), dtype=np.int8)
    m[0, layout.video] = 1
    m[1, layout.audio] = 1
    if rows == 4:
        m[2, layout.fusion] = 1
        m[3, :] = 1
    return m


def layer_masks(layout: StreamLayout, config: MaskConfig, n_layers: int) -> list:
    config.validate(n_layers)
    return [build_self_mask(layout, config, layer) for layer in range(n_layers)]


def reachability(masks) -> np.ndarray:
    """Which inputs can influence which token after a stack of masked layers.

    Each layer keeps a residual path, so a layer's step relation is
    ``mask | I``. Entry ``(i, j)`` of the result is 1 iff input token ``j``
    can affect the representation of token ``i``.
    """
    masks = [np.asarray(m) for m in masks]
    if not masks:
        raise ValueError("need at least one mask")
    n = masks[0].shape[0]
    reach = np.eye(n, dtype=bool)
    for m in masks:
        if m.shape != (n, n):
            raise ValueError(f"masks must be square and of one size, got {m.shape}")
        step = m.astype(bool) | np.eye(n, dtype=bool)
        reach = (step.astype(np.int64) @ reach.astype(np.int64)) > 0
    return reach.astype(np.int8)


def to_text(mask: np.ndarray) -> str:
    """One row per line, entries as 0/1 characters."""
    return "\n".join("".join("1" if x else "0" for x in row) for row in np.asarray(mask)) + "\n"


def from_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if any(set(r) - {"0", "1"} for r in rows):
        raise ValueError("mask text may only contain 0 and 1")
    if len({len(r) for r in rows}) > 1:
        raise ValueError("ragged mask text")
    return np.array([[int(c) for c in r] for r in rows], dtype=np.int8)
