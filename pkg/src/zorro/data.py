"""Synthetic paired audio-visual data with a shared latent cause.

Each sample draws a standard-normal latent. The class is the nearest
vertex of a regular simplex after a fixed random orthonormal projection,
which makes all classes exactly equally likely; the "video" and "audio" arrays are fixed
random linear maps of the latent (reshaped) plus Gaussian noise. With
probability ``1 - correlation`` the audio is driven by an independent
latent instead, so ``correlation=0`` gives unrelated modalities.

``centered`` makes each signal map average to zero over the tiles of the
given tile shape (at every within-tile offset). Averaging patch tokens of
that size then cancels the signal, so it is only recoverable through
position-dependent processing; a randomly initialised backbone, which pools
almost uniformly, sees mostly noise.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class SynthSpec:
    latent_dim: int = 8
    n_classes: int = 8
    video_shape: tuple = (2, 8, 8, 1)
    audio_shape: tuple = (8, 8)
    noise_sigma: float = 0.5
    correlation: float = 1.0
    seed: int = 0
    signal_scale: float = 1.0
    video_tile: tuple | None = None
    audio_tile: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [0, 1]")
        if self.n_classes < 2 or self.latent_dim < self.n_classes - 1:
            raise ValueError("need n_classes >= 2 and latent_dim >= n_classes - 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        object.__setattr__(self, "video_shape", tuple(self.video_shape))
        object.__setattr__(self, "audio_shape", tuple(self.audio_shape))
        for name in ("video_tile", "audio_tile"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))


@dataclass
class SynthBatch:
    video: np.ndarray  # (B, N_f, H, W, C)
    audio: np.ndarray  # (B, T, N_s)
    label: np.ndarray  # (B,)
    latent: np.ndarray  # (B, latent_dim), the video-side latent
    audio_latent: np.ndarray  # (B, latent_dim)
    present: dict = field(default_factory=lambda: {"video": True, "audio": True})

    def __len__(self) -> int:
        return self.label.shape[0]


def _center_tiles(maps: np.ndarray, shape: tuple, tile: tuple) -> np.ndarray:
    """Subtract, at each within-tile offset, the mean over tiles."""
    k = maps.shape[0]
    spatial = shape if len(tile) == len(shape) else shape[: len(tile)]
    rest = shape[len(tile):]
    grid = tuple(s // t for s, t in zip(spatial, tile))
    if any(s % t for s, t in zip(spatial, tile)):
        raise ValueError(f"tile {tile} does not divide {spatial}")
    split = [k]
    for g, t in zip(grid, tile):
        split += [g, t]
    x = maps.reshape(*split, *rest)
    grid_axes = tuple(1 + 2 * i for i in range(len(tile)))
    x = x - x.mean(axis=grid_axes, keepdims=True)
    return x.reshape(maps.shape)


def _simplex_map(rng: Rng, n_classes: int, k: int) -> np.ndarray:
    """(n_classes, k) map: simplex vertices composed with an orthonormal projection.

    The projected latent is isotropic and the vertices are permutation
    symmetric, so argmax over the rows gives uniform class probabilities.
    """
    q, _ = np.linalg.qr(rng.normal((k, k)))
    vertices = np.eye(n_classes) - 1.0 / n_classes
    u, _, _ = np.linalg.svd(vertices)
    basis = u[:, : n_classes - 1]  # orthonormal basis of the simplex's span
    return vertices @ basis @ q[: n_classes - 1]


class SynthGenerator:
    """Holds the fixed random maps of one spec; batches are pure in (spec, index)."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        root = Rng(spec.seed, ("synth",))
        k = spec.latent_dim
        self.class_map = _simplex_map(root.split("class"), spec.n_classes, k)
        self.video_map = self._map(root.split("video"), spec.video_shape, spec.video_tile)
        self.audio_map = self._map(root.split("audio"), spec.audio_shape, spec.audio_tile)

    def _map(self, rng: Rng, shape: tuple, tile) -> np.ndarray:
        k = self.spec.latent_dim
        m = rng.normal((k,) + shape)
        if tile is not None:
            m = _center_tiles(m, shape, tile)
        # unit signal variance per element on average, times signal_scale
        m *= self.spec.signal_scale / np.sqrt(np.mean(m * m) * k)
        return m

    def labels_of(self, latent: np.ndarray) -> np.ndarray:
        return np.argmax(latent @ self.class_map.T, axis=1)

    def batch(self, size: int, index: int = 0, split: str = "train") -> SynthBatch:
        s = self.spec
        rng = Rng(s.seed, ("batch", split, index))
        z = rng.split("latent").normal((size, s.latent_dim))
        z_other = rng.split("other").normal((size, s.latent_dim))
        keep = rng.split("pair").uniform(size) < s.correlation
        z_audio = np.where(keep[:, None], z, z_other)
        video = np.tensordot(z, self.video_map, axes=1)
        audio = np.tensordot(z_audio, self.audio_map, axes=1)
        video = video + s.noise_sigma * rng.split("video_noise").normal(video.shape)
        audio = audio + s.noise_sigma * rng.split("audio_noise").normal(audio.shape)
        return SynthBatch(video, audio, self.labels_of(z), z, z_audio)


def generate(spec: SynthSpec, batch: int, index: int = 0, split: str = "train") -> SynthBatch:
    return SynthGenerator(spec).batch(batch, index, split)


def drop_modality(batch: SynthBatch, which: str) -> SynthBatch:
    """Zero-fill one modality and mark it absent."""
    if which not in ("video", "audio"):
        raise ValueError(f"unknown modality {which!r}")
    present = dict(batch.present)
    present[which] = False
    video = np.zeros_like(batch.video) if which == "video" else batch.video
    audio = np.zeros_like(batch.audio) if which == "audio" else batch.audio
    return SynthBatch(video, audio, batch.label, batch.latent, batch.audio_latent, present)


# ---------------------------------------------------------------------------
# on-disk dump: JSON header line, then raw little-endian arrays

_ARRAYS = ("video", "audio", "label", "latent", "audio_latent")


def save_batch(path, batch: SynthBatch, spec: SynthSpec | None = None) -> None:
    header = {
        "spec": None if spec is None else asdict(spec),
        "present": batch.present,
        "arrays": [],
    }
    blobs = []
    for name in _ARRAYS:
        arr = np.ascontiguousarray(getattr(batch, name))
        dtype = "<i8" if name == "label" else "<f8"
        header["arrays"].append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.astype(dtype).tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_batch(path) -> tuple:
    """Returns ``(batch, spec_dict_or_None)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        buf = io.BytesIO(fh.read())
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"])) * dtype.itemsize
        arrays[entry["name"]] = np.frombuffer(buf.read(n), dtype=dtype).reshape(entry["shape"]).copy()
    batch = SynthBatch(present=header["present"], **arrays)
    return batch, header["spec"]
