import numpy as np
import pytest

from zorro import tensor as T
from zorro.masking import build_self_mask
from zorro.models import ModelConfigError, ZorroConfig, classifier_heads, forward, init_heads, init_params, patchify
from zorro.models.common import decode_outputs, embed_audio, embed_video, fusion_tokens
from zorro.models.hip import hip_block
from zorro.models.layers import block, embed_patches, init_block
from zorro.models.swin import layer_shift, window_block, window_partition
from zorro.rng import Rng
from zorro.tensor import ShapeError

ARCHS = ("vit", "swin", "hip")


def cfg_for(arch="vit", kind="zorro", **kw):
    return ZorroConfig.toy(arch, **kw).with_mask(kind)


def inputs(cfg, seed, batch=2):
    r = Rng(seed, ("inputs",))
    return r.split("v").normal((batch,) + cfg.video_shape), r.split("a").normal((batch,) + cfg.audio_shape)


def run(arch="vit", kind="zorro", seed=0, **kw):
    cfg = cfg_for(arch, kind, **kw)
    return cfg, init_params(cfg, Rng(seed))


# ---------------------------------------------------------------------------
# patchify


def test_patch_counts():
    assert patchify(np.zeros((1, 2, 8, 8, 1)), (1, 4, 4)).shape == (1, 8, 16)
    assert patchify(np.zeros((1, 8, 8, 1)), (4, 4)).shape == (1, 4, 16)


def test_patch_extraction_is_raster_over_grid():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    p = patchify(x, (2, 2)).data
    assert p[0, 0].tolist() == [0, 1, 4, 5]
    assert p[0, 1].tolist() == [2, 3, 6, 7]
    assert p[0, 3].tolist() == [10, 11, 14, 15]


def test_non_divisible_dims_rejected():
    with pytest.raises(ShapeError, match="divisible"):
        patchify(np.zeros((1, 2, 9, 8, 1)), (1, 4, 4))
    with pytest.raises(ShapeError):
        ZorroConfig(video_shape=(2, 10, 8, 1))


def test_zero_input_gives_position_embeddings():
    cfg, params = run()
    tp = {k: T.Tensor(v) for k, v in params.items()}
    tokens = embed_patches(np.zeros((1, 2, 8, 8, 1)), tp, "embed.video", cfg.video_patch)
    assert np.array_equal(tokens.data[0], params["embed.video.pos"])


def test_wrong_input_shape_rejected():
    cfg, params = run()
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 2, 8, 8, 3)), np.zeros((2, 8, 8)), cfg)


# ---------------------------------------------------------------------------
# outputs


@pytest.mark.parametrize("arch", ARCHS)
def test_output_shapes(arch):
    cfg, params = run(arch)
    video, audio = inputs(cfg, 1, batch=3)
    out = forward(params, video, audio, cfg)
    assert set(out.as_dict()) == {"video", "audio", "fusion", "global"}
    for t in out.as_dict().values():
        assert t.shape == (3, cfg.output_width)


@pytest.mark.parametrize("arch", ARCHS)
def test_two_streams_has_two_outputs(arch):
    cfg, params = run(arch, "two_streams")
    out = forward(params, *inputs(cfg, 1), cfg)
    assert set(out.as_dict()) == {"video", "audio"} and out.o_f is None and out.o_g is None
    assert "fusion.tokens" not in params


def test_single_sample_without_batch_axis():
    cfg, params = run()
    v, a = inputs(cfg, 2, batch=1)
    batched = forward(params, v, a, cfg).o_v.data
    single = forward(params, v[0], a[0], cfg).o_v.data
    assert np.array_equal(batched, single)


def test_full_scale_configuration_recorded():
    p = ZorroConfig.full_scale_vit()
    assert (p.width, p.layers, p.heads, p.n_fusion) == (768, 12, 12, 6)
    assert p.width * p.mlp_ratio == 3072
    assert p.input_layout.n_video == 8 * 14 * 14 and p.input_layout.n_audio == 16 * 8


def test_width_must_divide_heads():
    with pytest.raises(ModelConfigError):
        ZorroConfig(width=30, heads=4)


def test_swin_and_hip_reject_leaky_kinds():
    for arch in ("swin", "hip"):
        with pytest.raises(ModelConfigError):
            cfg_for(arch, "bottleneck")


# ---------------------------------------------------------------------------
# isolation and leaks


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("sharing", ["shared", "per_stream"])
def test_isolation_exact(arch, sharing):
    cfg, params = run(arch, weight_sharing=sharing, seed=3)
    v, a = inputs(cfg, 4)
    v2, a2 = inputs(cfg, 5)
    base = forward(params, v, a, cfg)
    assert np.array_equal(base.o_v.data, forward(params, v, a2, cfg).o_v.data)
    assert np.array_equal(base.o_a.data, forward(params, v2, a, cfg).o_a.data)


@pytest.mark.parametrize("kind", ["input_level", "bottleneck"])
def test_leaky_kinds_leak(kind):
    cfg, params = run("vit", kind, seed=3)
    v, a = inputs(cfg, 4)
    _, a2 = inputs(cfg, 5)
    d = np.max(np.abs(forward(params, v, a, cfg).o_v.data - forward(params, v, a2, cfg).o_v.data))
    assert d > 1e-8


@pytest.mark.parametrize("arch", ARCHS)
def test_zero_filled_audio_keeps_video_output(arch):
    cfg, params = run(arch, seed=6)
    v, a = inputs(cfg, 7)
    real = forward(params, v, a, cfg).o_v.data
    zero = forward(params, v, np.zeros_like(a), cfg).o_v.data
    assert np.array_equal(real, zero)


@pytest.mark.parametrize("arch", ARCHS)
def test_video_gradient_of_audio_output_is_zero(arch):
    cfg, params = run(arch, seed=8)
    v, a = inputs(cfg, 9)
    xv = T.Tensor(v, requires_grad=True)
    xa = T.Tensor(a, requires_grad=True)
    gv, ga = T.grad(T.tsum(forward(params, xv, xa, cfg).o_a), [xv, xa])
    assert not gv.any() and ga.any()


def test_fusion_output_uses_both_modalities():
    cfg, params = run(seed=2)
    v, a = inputs(cfg, 3)
    v2, a2 = inputs(cfg, 4)
    base = forward(params, v, a, cfg).o_f.data
    assert np.max(np.abs(base - forward(params, v2, a, cfg).o_f.data)) > 1e-8
    assert np.max(np.abs(base - forward(params, v, a2, cfg).o_f.data)) > 1e-8


@pytest.mark.parametrize("arch", ARCHS)
def test_zorro_equals_two_streams_on_unimodal_outputs(arch):
    zcfg, params = run(arch, seed=11)
    tcfg = cfg_for(arch, "two_streams")
    shared = {k: v for k, v in params.items() if not k.startswith("fusion") and k not in
              ("decoder.query.fusion", "decoder.query.global")}
    v, a = inputs(zcfg, 12)
    zo, to = forward(params, v, a, zcfg), forward(shared, v, a, tcfg)
    assert np.max(np.abs(zo.o_v.data - to.o_v.data)) <= 1e-12
    assert np.max(np.abs(zo.o_a.data - to.o_a.data)) <= 1e-12


@pytest.mark.parametrize("arch", ARCHS)
def test_fusion_start_layer_keeps_isolation(arch):
    depth = ZorroConfig.toy(arch).depth
    for start in range(depth):
        cfg = ZorroConfig.toy(arch).with_mask("zorro", fusion_start_layer=start)
        params = init_params(cfg, Rng(start))
        v, a = inputs(cfg, 1)
        _, a2 = inputs(cfg, 2)
        assert np.array_equal(forward(params, v, a, cfg).o_v.data, forward(params, v, a2, cfg).o_v.data)


def test_late_fusion_start_changes_fusion_output():
    cfg0 = ZorroConfig().with_mask("zorro", fusion_start_layer=0)
    cfg3 = ZorroConfig().with_mask("zorro", fusion_start_layer=3)
    params = init_params(cfg0, Rng(0))
    v, a = inputs(cfg0, 1)
    f0 = forward(params, v, a, cfg0).o_f.data
    f3 = forward(params, v, a, cfg3).o_f.data
    assert np.max(np.abs(f0 - f3)) > 1e-8


# ---------------------------------------------------------------------------
# structural equivalences


def test_permuting_video_patches_with_positions_is_invariant():
    cfg, params = run(seed=4)
    v, a = inputs(cfg, 5)
    tp = {k: T.Tensor(x) for k, x in params.items()}
    layout = cfg.input_layout

    def outputs(perm):
        vt = embed_video(tp, v, cfg).data[:, perm]
        x = T.concat([T.Tensor(vt), embed_audio(tp, a, cfg), fusion_tokens(tp, 2)], axis=1)
        for layer in range(cfg.layers):
            x = block(x, tp, f"block{layer}", build_self_mask(layout, cfg.mask, layer), cfg.heads)
        from zorro.models.layers import norm
        return decode_outputs(tp, norm(x, tp, "final_ln"), layout, cfg, cfg.heads).as_dict()

    ident = outputs(np.arange(layout.n_video))
    shuffled = outputs(Rng(9).permutation(layout.n_video))
    for name in ident:
        np.testing.assert_allclose(shuffled[name].data, ident[name].data, rtol=0, atol=1e-12)


def test_swin_window_partition_covers_every_token_once():
    for shift in [(0, 0, 0), (1, 1, 1)]:
        perm, mask = window_partition((2, 4, 4), (2, 2, 2), shift)
        assert sorted(perm.tolist()) == list(range(32))
        assert (mask is None) == (shift == (0, 0, 0))


def test_swin_shift_mask_matches_region_oracle():
    # 1-D grid of 4 with window 2 shifted by 1: rolled order is [1, 2, 3, 0]
    # window 0 = tokens (1, 2), same region; window 1 = tokens (3, 0), which wrapped and must not mix
    perm, mask = window_partition((4,), (2,), (1,))
    assert perm.tolist() == [1, 2, 3, 0]
    assert mask[0].tolist() == [[1, 1], [1, 1]]
    assert mask[1].tolist() == [[1, 0], [0, 1]]


def test_swin_layer_shift_alternates():
    assert layer_shift((2, 2, 2), (2, 2, 2), 0) == (0, 0, 0)
    assert layer_shift((4, 4, 4), (2, 2, 2), 1) == (1, 1, 1)
    # a window spanning its whole axis is never shifted
    assert layer_shift((2, 4), (2, 2), 1) == (0, 1)


def test_swin_whole_grid_window_equals_plain_block():
    p = {}
    init_block(p, Rng(1), "b", 32, 4.0)
    tp = {k: T.Tensor(v) for k, v in p.items()}
    x = Rng(2).normal((3, 8, 32))
    windowed = window_block(T.Tensor(x), tp, "b", (2, 2, 2), (2, 2, 2), (0, 0, 0), 4).data
    plain = block(T.Tensor(x), tp, "b", None, 4).data
    np.testing.assert_allclose(windowed, plain, rtol=0, atol=1e-10)


def naive_shifted_window_mask(grid, window, shift):
    """Tokens interact iff they share a window of the non-cyclic partition offset by ``shift``.

    Boundary windows are partial; nothing wraps around.
    """
    coords = np.indices(grid).reshape(len(grid), -1).T
    win = np.floor_divide(coords - np.asarray(shift), np.asarray(window))
    return (win[:, None, :] == win[None, :, :]).all(-1).astype(np.int8)


@pytest.mark.parametrize("grid,window,shift", [
    ((2, 4, 4), (2, 2, 2), (0, 1, 1)),
    ((4, 4), (2, 2), (1, 1)),
    ((6, 4), (3, 2), (1, 1)),
    ((4, 4), (2, 2), (0, 0)),
])
def test_shifted_window_block_matches_naive_partition(grid, window, shift):
    p = {}
    init_block(p, Rng(1), "b", 16, 2.0)
    tp = {k: T.Tensor(v) for k, v in p.items()}
    x = Rng(2).normal((2, int(np.prod(grid)), 16))
    got = window_block(T.Tensor(x), tp, "b", grid, window, shift, 2).data
    want = block(T.Tensor(x), tp, "b", naive_shifted_window_mask(grid, window, shift), 2).data
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_swin_toy_config_shifts_windows():
    cfg = cfg_for("swin")
    assert cfg.video_grid == (2, 4, 4) and cfg.audio_grid == (4, 4)
    assert layer_shift(cfg.video_grid, cfg.video_window, 1) == (0, 1, 1)
    assert layer_shift(cfg.audio_grid, cfg.audio_window, 1) == (1, 1)


def test_swin_grid_window_mismatch_rejected():
    with pytest.raises(ShapeError):
        init_params(ZorroConfig(arch="swin", video_window=(2, 3, 2)).with_mask("zorro"), Rng(0))


def test_hip_single_group_with_token_latents_is_plain_block():
    p = {}
    init_block(p, Rng(1), "b", 32, 4.0)
    x = Rng(2).normal((1, 8, 32))
    hp = {
        "h.latents": x[0][None],  # one group, latents = the tokens themselves
        "h.ln_q.g": p["b.ln1.g"], "h.ln_q.b": p["b.ln1.b"],
        "h.ln_kv.g": p["b.ln1.g"], "h.ln_kv.b": p["b.ln1.b"],
        "h.ln_cross_mlp.g": p["b.ln2.g"], "h.ln_cross_mlp.b": p["b.ln2.b"],
    }
    for part in ("q", "k", "v", "o"):
        for wb in ("w", "b"):
            hp[f"h.cross.{part}.{wb}"] = p[f"b.attn.{part}.{wb}"]
    for part in ("fc1", "fc2"):
        for wb in ("w", "b"):
            hp[f"h.cross_mlp.{part}.{wb}"] = p[f"b.mlp.{part}.{wb}"]
    got = hip_block(T.Tensor(x), {k: T.Tensor(v) for k, v in hp.items()}, "h", 1, 0, 4).data
    want = block(T.Tensor(x), {k: T.Tensor(v) for k, v in p.items()}, "b", None, 4).data
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


def test_hip_groups_are_contiguous():
    # latents of group g may only depend on tokens [g*n/G, (g+1)*n/G)
    cfg, params = run("hip", seed=0)
    tp = {k: T.Tensor(v) for k, v in params.items()}
    x = Rng(3).normal((1, 8, 32))
    x2 = x.copy()
    x2[:, 4:] += 1.0  # only group 1 of 2 changes
    a = hip_block(T.Tensor(x), tp, "hip0", 2, 1, 4).data
    b = hip_block(T.Tensor(x2), tp, "hip0", 2, 1, 4).data
    k = params["hip0.latents"].shape[1]
    assert np.array_equal(a[:, :k], b[:, :k]) and not np.array_equal(a[:, k:], b[:, k:])


def test_hip_grouping_mismatch_rejected():
    with pytest.raises(ShapeError):
        hip_block(T.Tensor(np.zeros((1, 7, 32))), {}, "x", 2, 0, 4)


# ---------------------------------------------------------------------------
# classifier heads


def heads_for(kind):
    cfg, params = run("vit", kind)
    init_heads(params, Rng(5), cfg.output_names, cfg.width, 8)
    out = forward(params, *inputs(cfg, 1), cfg)
    return classifier_heads(out.as_dict(), {k: T.Tensor(v) for k, v in params.items()})


def test_two_streams_averages_two_heads():
    logits, avg = heads_for("two_streams")
    assert sorted(logits) == ["audio", "video"]
    want = (T.softmax(logits["audio"]).data + T.softmax(logits["video"]).data) / 2
    np.testing.assert_allclose(avg.data, want, atol=1e-15)


def test_identical_heads_average_to_one_head():
    z = T.Tensor(np.array([[1.0, -2.0, 0.5]]))
    p = {"head.a.w": T.Tensor(np.eye(3)), "head.a.b": T.Tensor(np.zeros(3)),
         "head.b.w": T.Tensor(np.eye(3)), "head.b.b": T.Tensor(np.zeros(3))}
    _, avg = classifier_heads({"a": z, "b": z}, p)
    np.testing.assert_allclose(avg.data, T.softmax(z).data, atol=1e-15)


def test_disagreeing_one_hot_heads_average_arithmetically():
    big = 200.0
    outs = {n: T.Tensor(np.eye(4)[[i]] * big) for i, n in enumerate(["video", "audio", "fusion", "global"])}
    p = {}
    for n in outs:
        p[f"head.{n}.w"] = T.Tensor(np.eye(4))
        p[f"head.{n}.b"] = T.Tensor(np.zeros(4))
    _, avg = classifier_heads(outs, p)
    np.testing.assert_allclose(avg.data, [[0.25, 0.25, 0.25, 0.25]], atol=1e-12)


def test_multi_label_heads_use_sigmoid():
    z = T.Tensor(np.array([[0.0, 2.0]]))
    p = {"head.a.w": T.Tensor(np.eye(2)), "head.a.b": T.Tensor(np.zeros(2))}
    _, avg = classifier_heads({"a": z}, p, mode="multi")
    np.testing.assert_allclose(avg.data, 1 / (1 + np.exp(-z.data)), atol=1e-15)


def test_initialisation_is_order_independent():
    cfg = cfg_for()
    a = init_params(cfg, Rng(3))
    b = init_params(cfg, Rng(3))
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["block0.attn.q.w"], init_params(cfg, Rng(4))["block0.attn.q.w"])
