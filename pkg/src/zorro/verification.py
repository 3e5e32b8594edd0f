"""Executable checks of the stream-isolation and collapse properties.

Every check returns a plain record ``{"name", "config", "metrics", "pass"}``
and is deterministic given its seed. :func:`write_report` stores records as
JSON lines, one per check.
"""

from __future__ import annotations

import json
import math
import time
import numpy as np

from . import tensor as T
from .data import SynthSpec
from .masking import KINDS, MaskConfig, StreamLayout, build_decoder_mask, from_text, layer_masks, reachability
from .models import ZorroConfig, forward, init_params
from .models.layers import decode
from .rng import Rng
from .train import (LossConfig, OptimConfig, RunConfig, RunOptions, Trainer, init_run_params, linear_probe,
                    retrieval_metrics, run_loss)

ISOLATION_TOL = 1e-12
LEAK_THRESHOLD = 1e-8
GRAD_TOL = 1e-4
# Relative error uses max(|analytic|, |numeric|, GRAD_FLOOR) as denominator.
# Central differences at h=1e-5 carry roundoff near eps*|loss|/h ~ 1e-10, so
# structurally zero gradients (e.g. key biases under softmax) need a floor.
GRAD_FLOOR = 1e-5
FD_STEP = 1e-5


def record(name: str, config: dict, metrics: dict, ok: bool) -> dict:
    return {"name": name, "config": config, "metrics": metrics, "pass": bool(ok)}


def toy_config(arch: str = "vit", kind: str = "zorro", **kw) -> ZorroConfig:
    return ZorroConfig.toy(arch, **kw).with_mask(kind)


def _isolated(kind: str) -> bool:
    return kind in ("zorro", "two_streams")


def _random_inputs(rng: Rng, cfg: ZorroConfig, batch: int):
    return (rng.split("video").normal((batch,) + tuple(cfg.video_shape)),
            rng.split("audio").normal((batch,) + tuple(cfg.audio_shape)))


# ---------------------------------------------------------------------------
# isolation


def check_isolation(cfg: ZorroConfig, trials: int = 50, seed: int = 0, batch: int = 2) -> dict:
    """Replace one modality's input and measure how far the other modality's output moves.

    Each trial draws fresh parameters and fresh inputs. Zorro and
    two-streams must not move at all; input-level and bottleneck are
    expected to leak, so for them the check passes when the move exceeds
    ``LEAK_THRESHOLD``.
    """
    dv = da = 0.0
    for t in range(trials):
        rng = Rng(seed, ("isolation", t))
        params = init_params(cfg, rng.split("params"))
        video, audio = _random_inputs(rng.split("x"), cfg, batch)
        video2, audio2 = _random_inputs(rng.split("y"), cfg, batch)
        base = forward(params, video, audio, cfg)
        swap_audio = forward(params, video, audio2, cfg)
        swap_video = forward(params, video2, audio, cfg)
        dv = max(dv, float(np.max(np.abs(base.o_v.data - swap_audio.o_v.data))))
        da = max(da, float(np.max(np.abs(base.o_a.data - swap_video.o_a.data))))
    if _isolated(cfg.mask.kind):
        ok = dv <= ISOLATION_TOL and da <= ISOLATION_TOL
    else:
        ok = dv > LEAK_THRESHOLD and da > LEAK_THRESHOLD
    return record("isolation", _describe(cfg) | {"trials": trials, "seed": seed},
                  {"max_dov_audio_swap": dv, "max_doa_video_swap": da}, ok)


def check_gradient_isolation(cfg: ZorroConfig, seed: int = 0, n_fd: int = 6) -> dict:
    """Gradient of ``sum(o_a)`` with respect to the video input.

    Must be identically zero for isolated kinds and nonzero otherwise. A few
    video entries are also checked against central finite differences.
    """
    rng = Rng(seed, ("grad_isolation",))
    params = init_params(cfg, rng.split("params"))
    video, audio = _random_inputs(rng.split("x"), cfg, 2)

    def objective(v):
        return float(np.sum(forward(params, v, audio, cfg).o_a.data))

    xv = T.Tensor(video, requires_grad=True)
    out = forward(params, xv, audio, cfg)
    g = T.grad(T.tsum(out.o_a), [xv])[0]
    inf_norm = float(np.max(np.abs(g)))

    picks = rng.split("fd").integers(video.size, n_fd)
    fd_err = 0.0
    for flat in picks:
        idx = np.unravel_index(int(flat), video.shape)
        num = _central_difference(objective, video, idx)
        fd_err = max(fd_err, _rel_err(float(g[idx]), num))
    if _isolated(cfg.mask.kind):
        ok = inf_norm == 0.0 and fd_err <= GRAD_TOL
    else:
        ok = inf_norm > 0.0 and fd_err <= GRAD_TOL
    return record("gradient_isolation", _describe(cfg) | {"seed": seed},
                  {"grad_inf_norm": inf_norm, "fd_max_rel_err": fd_err}, ok)


def _central_difference(fn, x: np.ndarray, idx, h: float = FD_STEP) -> float:
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (fn(xp) - fn(xm)) / (2 * h)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), GRAD_FLOOR)


# ---------------------------------------------------------------------------
# finite-difference gradient check of full training losses


def check_loss_gradients(cfg: RunConfig, subsets: int = 20, per_subset: int = 3, batch: int = 4,
                         seed: int = 0) -> dict:
    """Backward versus central differences on random parameter entries.

    Each subset picks one parameter array at random and ``per_subset``
    entries inside it.
    """
    rng = Rng(seed, ("loss_gradients",))
    params = init_run_params(cfg)
    from .data import SynthGenerator

    data = SynthGenerator(cfg.data).batch(batch, index=0, split="gradcheck")
    names = sorted(params)

    def loss_at(p):
        return float(run_loss(T.parameters(p), data, cfg)[0].data)

    tp = T.parameters(params)
    loss, _ = run_loss(tp, data, cfg)
    got = T.backward(loss)
    worst = 0.0
    worst_at = None
    for s in range(subsets):
        srng = rng.split("subset", s)
        name = names[int(srng.integers(len(names)))]
        arr = params[name]
        analytic = got.get(tp[name].id, np.zeros_like(arr))
        for flat in srng.split("entries").integers(arr.size, per_subset):
            idx = np.unravel_index(int(flat), arr.shape)

            def fn(value, name=name, idx=idx):
                trial = dict(params)
                trial[name] = value
                return loss_at(trial)

            num = _central_difference(fn, arr, idx)
            err = _rel_err(float(analytic[idx]), num)
            if err > worst:
                worst, worst_at = err, f"{name}{[int(i) for i in idx]}"
    return record("loss_gradients", _describe(cfg.model) | {"loss": cfg.loss.kind, "subsets": subsets, "seed": seed},
                  {"max_rel_err": worst, "worst_entry": worst_at}, worst <= GRAD_TOL)


# ---------------------------------------------------------------------------
# collapse experiment

COLLAPSED_KINDS = ("input_level", "bottleneck")


def collapse_data(seed: int = 0, correlation: float = 1.0) -> SynthSpec:
    """Paired data where class evidence cancels under uniform pooling of patches.

    Signal maps are centred over 4x4 tiles, so a backbone has to learn
    position-dependent features to read the latent. Noise of unit variance
    keeps an untrained network's features near chance.
    """
    return SynthSpec(n_classes=8, noise_sigma=1.0, correlation=correlation, seed=seed,
                     video_tile=(1, 4, 4), audio_tile=(4, 4))


def collapse_run_config(kind: str, steps: int = 3000, seed: int = 0, correlation: float = 1.0,
                        include_fusion_terms: bool = False) -> RunConfig:
    return RunConfig(
        model=toy_config("vit", kind),
        loss=LossConfig(include_fusion_terms=include_fusion_terms),
        data=collapse_data(seed, correlation),
        optim=OptimConfig(steps=steps),
        run=RunOptions(seed=seed),
    ).validate()


def chance_band(n_classes: int, n_eval: int) -> tuple:
    """Chance accuracy and one binomial standard deviation on ``n_eval`` samples."""
    p = 1.0 / n_classes
    return p, math.sqrt(p * (1.0 - p) / n_eval)


def run_collapse_experiment(kinds=KINDS, steps: int = 3000, seed: int = 0, correlation: float = 1.0,
                            include_fusion_terms: bool = False, retrieval_batch: int = 256) -> list:
    """Train each masking kind contrastively on identical data and budgets, then probe.

    Isolated kinds pass when the averaged linear probe beats chance by more
    than five binomial standard deviations and top-1 retrieval exceeds
    ``5 / retrieval_batch``. The other kinds pass when the probe ends within
    five standard deviations of chance. With ``correlation=0`` every kind is
    expected at chance.
    """
    records = []
    for kind in kinds:
        cfg = collapse_run_config(kind, steps, seed, correlation, include_fusion_terms and kind != "two_streams")
        start = time.perf_counter()
        tr = Trainer(cfg)
        tr.fit()
        chance, sd = chance_band(cfg.data.n_classes, cfg.run.probe_eval)
        diverged = next((r["step"] for r in tr.log if r.get("diverged")), None)
        metrics = {"steps": len(tr.log), "final_loss": tr.log[-1]["loss"], "chance": chance, "sigma": sd}
        if diverged is not None:
            metrics["diverged_at"] = diverged
            records.append(record("collapse", {"kind": kind, "seed": seed}, metrics, False))
            continue
        acc = linear_probe(tr.params, cfg)
        ret = retrieval_metrics(tr.params, cfg, retrieval_batch)
        metrics |= {"probe": acc, **ret, "seconds": time.perf_counter() - start}
        probe = acc["average"]
        if correlation == 0.0 or kind in COLLAPSED_KINDS:
            ok = abs(probe - chance) <= 5 * sd
            metrics["expect"] = "chance"
        else:
            ok = probe > chance + 5 * sd and ret["top1_retrieval"] > 5.0 / retrieval_batch
            metrics["expect"] = "above_chance"
        config = {"kind": kind, "seed": seed, "steps": steps, "correlation": correlation,
                  "include_fusion_terms": cfg.loss.include_fusion_terms, "config_hash": cfg.hash()}
        records.append(record("collapse", config, metrics, ok))
    return records


# ---------------------------------------------------------------------------
# equivalences

# reachability after two layers on the (2, 2, 1) layout, rows = outputs
REACH_GOLDEN_2x2x1 = {
    "zorro": "11000\n11000\n00110\n00110\n11111",
    "two_streams": "11000\n11000\n00110\n00110\n00001",
    "input_level": "11111\n11111\n11111\n11111\n11111",
    "bottleneck": "11111\n11111\n11111\n11111\n11111",
}
# one bottleneck layer: the unimodal rows only see the fusion token, not the other modality yet
REACH_GOLDEN_BOTTLENECK_1 = "11001\n11001\n00111\n00111\n11111"


def _shared_params_two_streams(params: dict) -> dict:
    drop = ("fusion.tokens", "decoder.query.fusion", "decoder.query.global")
    return {k: v for k, v in params.items() if k not in drop and not k.startswith("fusion")}


def _unmasked_vit_outputs(params: dict, video, audio, cfg: ZorroConfig):
    """Plain transformer: every attention unmasked, decoder queries read all tokens."""
    from .models.common import embed_audio, embed_video, fusion_tokens
    from .models.layers import block, norm

    tp = {k: T.Tensor(v) for k, v in params.items()}
    parts = [embed_video(tp, video, cfg), embed_audio(tp, audio, cfg)]
    if cfg.input_layout.n_fusion:
        parts.append(fusion_tokens(tp, parts[0].shape[0]))
    x = T.concat(parts, axis=1)
    for layer in range(cfg.layers):
        x = block(x, tp, f"block{layer}", None, cfg.heads)
    return norm(x, tp, "final_ln")


def check_equivalences(seed: int = 0) -> list:
    records = []
    rng = Rng(seed, ("equivalence",))
    # (a) zorro and two_streams agree on unimodal outputs with identical weights
    for arch in ("vit", "swin", "hip"):
        zcfg = toy_config(arch, "zorro")
        tcfg = toy_config(arch, "two_streams")
        params = init_params(zcfg, rng.split(arch))
        video, audio = _random_inputs(rng.split(arch, "x"), zcfg, 3)
        zo = forward(params, video, audio, zcfg)
        to = forward(_shared_params_two_streams(params), video, audio, tcfg)
        diff = max(float(np.max(np.abs(zo.o_v.data - to.o_v.data))),
                   float(np.max(np.abs(zo.o_a.data - to.o_a.data))))
        records.append(record("zorro_equals_two_streams", {"arch": arch, "seed": seed},
                              {"max_abs_diff": diff}, diff <= ISOLATION_TOL))

    # (b) input_level masking is the unmasked transformer
    cfg = toy_config("vit", "input_level")
    params = init_params(cfg, rng.split("input_level"))
    video, audio = _random_inputs(rng.split("input_level", "x"), cfg, 3)
    from .models.vit import vit_encode

    masked, _ = vit_encode(params, video, audio, cfg)
    plain = _unmasked_vit_outputs(params, video, audio, cfg)
    diff = float(np.max(np.abs(masked.data - plain.data)))
    records.append(record("input_level_equals_unmasked", {"arch": "vit", "seed": seed},
                          {"max_abs_diff": diff, "bit_identical": bool(np.array_equal(masked.data, plain.data))},
                          diff <= ISOLATION_TOL))

    # (c) o_F reads only fusion-token final states
    cfg = toy_config("vit", "zorro")
    params = init_params(cfg, rng.split("decoder"))
    layout = cfg.input_layout
    tokens = rng.split("decoder", "tokens").normal((3, layout.total, cfg.width))
    noise = rng.split("decoder", "noise").normal(tokens.shape)
    noise[:, layout.fusion] = 0.0
    tp = {k: T.Tensor(v) for k, v in params.items()}
    mask = build_decoder_mask(layout, cfg.mask)
    base = decode(tp, "decoder", T.Tensor(tokens), mask, cfg.heads, 4).data
    moved = decode(tp, "decoder", T.Tensor(tokens + noise), mask, cfg.heads, 4).data
    diff = float(np.max(np.abs(base[:, 2] - moved[:, 2])))
    records.append(record("decoder_fusion_invariance", {"seed": seed},
                          {"max_abs_diff_o_f": diff, "max_abs_diff_o_g": float(np.max(np.abs(base[:, 3] - moved[:, 3])))},
                          diff == 0.0))

    # (d) reachability closure on the hand-enumerated (2, 2, 1) layout
    layout = StreamLayout(2, 2, 1)
    for kind in KINDS:
        got = reachability(layer_masks(layout, MaskConfig(kind), 2))
        want = from_text(REACH_GOLDEN_2x2x1[kind])
        records.append(record("reachability_golden", {"kind": kind, "layout": [2, 2, 1], "layers": 2},
                              {"mismatches": int(np.sum(got != want))}, np.array_equal(got, want)))
    got = reachability(layer_masks(layout, MaskConfig("bottleneck"), 1))
    records.append(record("reachability_golden", {"kind": "bottleneck", "layout": [2, 2, 1], "layers": 1},
                          {"mismatches": int(np.sum(got != from_text(REACH_GOLDEN_BOTTLENECK_1)))},
                          np.array_equal(got, from_text(REACH_GOLDEN_BOTTLENECK_1))))
    return records


def fusion_start_sweep(arch: str = "vit", trials: int = 10, seed: int = 0) -> list:
    """Isolation at fusion_start_layer in {0, L/4, L/2, 3L/4}."""
    base = ZorroConfig.toy(arch)
    depth = base.depth
    starts = sorted({0, depth // 4, depth // 2, (3 * depth) // 4})
    out = []
    for start in starts:
        cfg = base.with_mask("zorro", fusion_start_layer=start)
        rec = check_isolation(cfg, trials, seed)
        rec["name"] = "fusion_start_isolation"
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# suite and report


def default_suite(seed: int = 0, trials: int = 50, collapse_steps: int = 3000, collapse: bool = True,
                  log=None) -> list:
    """Everything ``zorro verify`` runs by default."""
    say = log or (lambda msg: None)
    records = []
    for arch in ("vit", "swin", "hip"):
        for kind in (("zorro", "two_streams", "input_level", "bottleneck") if arch == "vit" else ("zorro", "two_streams")):
            cfg = toy_config(arch, kind)
            records.append(check_isolation(cfg, trials, seed))
            records.append(check_gradient_isolation(cfg, seed))
            say(_summary(records[-2]))
    records += check_equivalences(seed)
    for arch in ("vit", "swin", "hip"):
        records += fusion_start_sweep(arch, max(trials // 5, 2), seed)
    for arch in ("vit", "swin", "hip"):
        for loss in ("contrastive", "supervised"):
            cfg = RunConfig(model=toy_config(arch, "zorro"), loss=LossConfig(kind=loss), run=RunOptions(seed=seed))
            records.append(check_loss_gradients(cfg, seed=seed))
            say(_summary(records[-1]))
    if collapse:
        for rec in run_collapse_experiment(steps=collapse_steps, seed=seed):
            records.append(rec)
            say(_summary(rec))
    return records


def _describe(cfg: ZorroConfig) -> dict:
    return {"arch": cfg.arch, "kind": cfg.mask.kind, "fusion_start_layer": cfg.mask.fusion_start_layer}


def _summary(rec: dict) -> str:
    return f"{'PASS' if rec['pass'] else 'FAIL'} {rec['name']} {json.dumps(rec['config'], sort_keys=True)}"


def write_report(path, records: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_report(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
