"""Training loop, linear probing and run configuration.

A run is fully determined by its :class:`RunConfig`: parameters are
initialised from counter-based streams keyed by the seed, batch ``i`` is
generated from ``(data seed, i)`` and the mixed-unimodal choice for step
``i`` from ``(seed, i)``. Resuming from a checkpoint therefore replays the
remaining steps exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .data import SynthGenerator, SynthSpec, drop_modality
from .masking import MaskConfig
from .models import ZorroConfig, classifier_heads, forward, init_heads, init_params, init_projectors, project
from .objectives import ContrastiveConfig, collapse_metrics, contrastive_loss, supervised_loss
from .optim import SGD, Adam, cosine_schedule
from .rng import Rng

OUTPUT_KEYS = {"video": "o_v", "audio": "o_a", "fusion": "o_f", "global": "o_g"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    kind: str = "contrastive"  # contrastive | supervised
    tau: float = 0.08
    include_fusion_terms: bool = False
    symmetric: bool = False
    label_mode: str = "single"
    projector_hidden: int = 64
    embed_dim: int = 32


@dataclass(frozen=True)
class OptimConfig:
    name: str = "adam"
    lr: float = 1e-3
    warmup_steps: int = 10
    weight_decay: float = 1e-6
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 200


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    mixed_unimodal: bool = False
    checkpoint_every: int = 0
    probe_train: int = 1024
    probe_eval: int = 512
    probe_steps: int = 300
    probe_lr: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    model: ZorroConfig = field(default_factory=ZorroConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: SynthSpec = field(default_factory=SynthSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunOptions = field(default_factory=RunOptions)

    def validate(self) -> "RunConfig":
        m, l, d = self.model, self.loss, self.data
        if l.kind not in ("contrastive", "supervised"):
            raise ConfigError(f"loss.kind must be contrastive or supervised, got {l.kind!r}")
        if l.label_mode not in ("single", "multi"):
            raise ConfigError(f"loss.label_mode must be single or multi, got {l.label_mode!r}")
        if l.kind == "contrastive" and l.include_fusion_terms and not m.mask.has_fusion:
            raise ConfigError("loss.include_fusion_terms needs fusion outputs; two_streams has none")
        if l.kind == "contrastive" and l.label_mode == "multi":
            raise ConfigError("label_mode only applies to supervised training")
        if self.run.mixed_unimodal and l.kind != "supervised":
            raise ConfigError("run.mixed_unimodal needs supervised loss: a unimodal batch has no cross-modal pairs")
        if tuple(m.video_shape) != tuple(d.video_shape) or tuple(m.audio_shape) != tuple(d.audio_shape):
            raise ConfigError("data shapes must match model input shapes")
        if self.optim.name not in ("adam", "sgd"):
            raise ConfigError(f"optim.name must be adam or sgd, got {self.optim.name!r}")
        if l.kind == "contrastive" and self.optim.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")
        return self

    def hash(self) -> str:
        return hashlib.sha256(config_to_text(self).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# config text: INI sections model, mask, loss, data, optim, run

_TUPLE_KEYS = {"video_shape", "audio_shape", "video_patch", "audio_patch", "video_window", "audio_window",
               "hip_groups", "hip_latents", "hip_channels", "hip_self_layers", "hip_heads", "video_tile", "audio_tile"}


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _parse(value: str, default, key: str):
    value = value.strip()
    if key in _TUPLE_KEYS:
        if value.lower() == "none":
            return None
        return tuple(int(v) for v in value.split(",") if v.strip())
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _section_items(obj, skip=()) -> dict:
    return {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip}


def config_to_text(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp["model"] = _section_items(cfg.model, skip=("mask",))
    cp["mask"] = _section_items(cfg.model.mask)
    cp["loss"] = _section_items(cfg.loss)
    cp["data"] = _section_items(cfg.data)
    cp["optim"] = _section_items(cfg.optim)
    cp["run"] = _section_items(cfg.run)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _build(cls, section, base, skip=()):
    known = {f.name: getattr(base, f.name) for f in fields(cls) if f.name not in skip}
    values = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown config key [{section.name}] {key}")
        try:
            values[key] = _parse(raw, known[key], key)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section.name}] {key}: {exc}") from exc
    return values


def config_from_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text; missing keys fall back to ``base`` (defaults), unknown keys are errors."""
    base = base or RunConfig()
    cp = configparser.ConfigParser()
    cp.read_string(text)
    allowed = {"model", "mask", "loss", "data", "optim", "run"}
    for name in cp.sections():
        if name not in allowed:
            raise ConfigError(f"unknown config section [{name}]")
    def section(name):
        return cp[name] if cp.has_section(name) else _Empty(name)

    mask_kw = _build(MaskConfig, section("mask"), base.model.mask)
    mask = replace(base.model.mask, **mask_kw)
    model_kw = _build(ZorroConfig, section("model"), base.model, skip=("mask",))
    try:
        model = replace(base.model, mask=mask, **model_kw)
        loss = replace(base.loss, **_build(LossConfig, section("loss"), base.loss))
        data = replace(base.data, **_build(SynthSpec, section("data"), base.data))
        optim = replace(base.optim, **_build(OptimConfig, section("optim"), base.optim))
        run = replace(base.run, **_build(RunOptions, section("run"), base.run))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(model, loss, data, optim, run).validate()


class _Empty(dict):
    def __init__(self, name):
        super().__init__()
        self.name = name


# ---------------------------------------------------------------------------
# parameters and steps


def init_run_params(cfg: RunConfig) -> dict:
    rng = Rng(cfg.run.seed)
    params = init_params(cfg.model, rng)
    names = cfg.model.output_names
    width = cfg.model.output_width
    if cfg.loss.kind == "contrastive":
        proj = list(names[:2])
        if cfg.loss.include_fusion_terms:
            proj.append("fusion")
        init_projectors(params, rng.split("projector"), proj, width, cfg.loss.projector_hidden, cfg.loss.embed_dim)
    else:
        init_heads(params, rng.split("heads"), names, width, cfg.data.n_classes)
    return params


def outputs_dict(out) -> dict:
    return out.as_dict()


def run_loss(tparams: dict, batch, cfg: RunConfig):
    """Scalar loss Tensor and the decoded outputs for one batch."""
    out = forward(tparams, batch.video, batch.audio, cfg.model)
    if cfg.loss.kind == "contrastive":
        z_a = project(out.o_a, tparams, "audio")
        z_v = project(out.o_v, tparams, "video")
        z_f = project(out.o_f, tparams, "fusion") if cfg.loss.include_fusion_terms else None
        ccfg = ContrastiveConfig(cfg.loss.tau, cfg.loss.include_fusion_terms, cfg.loss.symmetric)
        return contrastive_loss(z_a, z_v, z_f, ccfg), out
    outs = out.as_dict()
    # heads whose only input is an absent modality get no loss
    for name, flag in (("video", batch.present["video"]), ("audio", batch.present["audio"])):
        if not flag:
            outs.pop(name)
    logits, _ = classifier_heads(outs, tparams, cfg.loss.label_mode)
    labels = batch.label
    if cfg.loss.label_mode == "multi":
        labels = np.eye(cfg.data.n_classes)[batch.label]
    return supervised_loss(logits, labels, cfg.loss.label_mode), out


def make_optimizer(cfg: OptimConfig):
    if cfg.name == "adam":
        return Adam(weight_decay=cfg.weight_decay)
    return SGD(momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def batch_for_step(gen: SynthGenerator, cfg: RunConfig, step: int):
    batch = gen.batch(cfg.optim.batch_size, index=step, split="train")
    if cfg.run.mixed_unimodal:
        # each step draws from the "audio-only" or the "video-only" dataset with probability 1/2
        use_video = Rng(cfg.run.seed, ("mix", step)).uniform() < 0.5
        batch = drop_modality(batch, "audio" if use_video else "video")
    return batch


class Trainer:
    def __init__(self, cfg: RunConfig, params: dict | None = None):
        self.cfg = cfg.validate()
        self.gen = SynthGenerator(cfg.data)
        self.params = params if params is not None else init_run_params(cfg)
        self.optimizer = make_optimizer(cfg.optim)
        self.step = 0
        self.log: list = []

    @classmethod
    def resume(cls, ckpt) -> "Trainer":
        """Continue from a loaded checkpoint (params, optimizer state, step)."""
        tr = cls(ckpt.config, {k: np.array(v) for k, v in ckpt.params.items()})
        tr.optimizer.load_state_dict(ckpt.optim_state)
        tr.step = ckpt.step
        return tr

    def lr_at(self, step: int) -> float:
        o = self.cfg.optim
        return cosine_schedule(step, o.steps, o.lr, o.warmup_steps)

    def train_step(self) -> dict:
        batch = batch_for_step(self.gen, self.cfg, self.step)
        tparams = T.parameters(self.params)
        loss, out = run_loss(tparams, batch, self.cfg)
        got = T.backward(loss)
        grads = {name: got[t.id] for name, t in tparams.items() if t.id in got}
        lr = self.lr_at(self.step)
        record = {"step": self.step, "loss": float(loss.data), "lr": lr}
        if not math.isfinite(record["loss"]):
            record["diverged"] = True
        else:
            self.optimizer.step(self.params, grads, lr)
        self.step += 1
        self.log.append(record)
        return record

    def fit(self, steps: int | None = None, callback=None) -> list:
        end = self.cfg.optim.steps if steps is None else min(self.step + steps, self.cfg.optim.steps)
        while self.step < end:
            rec = self.train_step()
            if callback is not None:
                callback(self, rec)
            if rec.get("diverged"):
                break
        return self.log


# ---------------------------------------------------------------------------
# probing


def extract_features(params: dict, cfg: RunConfig, split: str, n: int, chunk: int = 256) -> tuple:
    """Frozen backbone outputs ``{name: (n, D)}`` and labels for a data split."""
    gen = SynthGenerator(cfg.data)
    feats: dict = {}
    labels = []
    done, index = 0, 0
    while done < n:
        size = min(chunk, n - done)
        batch = gen.batch(size, index=index, split=split)
        out = forward(params, batch.video, batch.audio, cfg.model)
        for name, t in out.as_dict().items():
            feats.setdefault(name, []).append(t.data)
        labels.append(batch.label)
        done += size
        index += 1
    return {k: np.concatenate(v) for k, v in feats.items()}, np.concatenate(labels)


def fit_linear_probe(x: np.ndarray, y: np.ndarray, n_classes: int, steps: int, lr: float, seed: int) -> dict:
    """Softmax regression on standardised features, full-batch Adam."""
    mu, sd = x.mean(0), x.std(0) + 1e-8
    xs = (x - mu) / sd
    rng = Rng(seed, ("probe",))
    w = {"w": rng.normal((x.shape[1], n_classes), 0.01), "b": np.zeros(n_classes)}
    opt = Adam()
    onehot = np.eye(n_classes)[y]
    for _ in range(steps):
        tw = T.parameters(w)
        logits = T.matmul(xs, tw["w"]) + tw["b"]
        loss = -T.tsum(T.log_softmax(logits) * onehot) * (1.0 / len(y))
        got = T.backward(loss)
        opt.step(w, {k: got[t.id] for k, t in tw.items()}, lr)
    return {"w": w["w"], "b": w["b"], "mu": mu, "sd": sd}


def probe_probs(probe: dict, x: np.ndarray) -> np.ndarray:
    z = ((x - probe["mu"]) / probe["sd"]) @ probe["w"] + probe["b"]
    z = z - z.max(1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(1, keepdims=True)


def linear_probe(params: dict, cfg: RunConfig, heads=None) -> dict:
    """Train one linear classifier per output on frozen features; eval accuracy per head and averaged."""
    r = cfg.run
    available = cfg.model.output_names
    heads = list(available if heads is None else heads)
    for h in heads:
        if h not in available:
            raise ConfigError(f"no {h!r} output under {cfg.model.mask.kind} masking (available: {available})")
    xtr, ytr = extract_features(params, cfg, "probe_train", r.probe_train)
    xev, yev = extract_features(params, cfg, "probe_eval", r.probe_eval)
    acc = {}
    probs = []
    for h in heads:
        pr = fit_linear_probe(xtr[h], ytr, cfg.data.n_classes, r.probe_steps, r.probe_lr, r.seed)
        p = probe_probs(pr, xev[h])
        probs.append(p)
        acc[h] = float(np.mean(p.argmax(1) == yev))
    acc["average"] = float(np.mean(np.mean(probs, axis=0).argmax(1) == yev))
    return acc


def retrieval_metrics(params: dict, cfg: RunConfig, n: int = 256) -> dict:
    """Collapse metrics of projected audio/video embeddings on held-out pairs."""
    gen = SynthGenerator(cfg.data)
    batch = gen.batch(n, index=0, split="retrieval")
    out = forward(params, batch.video, batch.audio, cfg.model)
    tp = {k: T.Tensor(v) for k, v in params.items()}
    if "proj.audio.fc1.w" in params:
        z_a = project(out.o_a, tp, "audio").data
        z_v = project(out.o_v, tp, "video").data
    else:
        z_a, z_v = out.o_a.data, out.o_v.data
    return collapse_metrics(z_a, z_v)


def metrics_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
