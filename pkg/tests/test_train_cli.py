import json
from dataclasses import replace

import numpy as np
import pytest

from zorro import checkpoint, cli, verification
from zorro.data import SynthGenerator
from zorro.masking import from_text
from zorro.train import (ConfigError, OptimConfig, RunConfig, RunOptions, Trainer, batch_for_step, config_from_text,
                         config_to_text, init_run_params, linear_probe)

TINY_INI = """
[model]
layers = 2
width = 16
heads = 2

[optim]
steps = 6
batch_size = 4
warmup_steps = 2

[run]
seed = 5
probe_train = 64
probe_eval = 32
probe_steps = 20
"""


def tiny(**sections):
    cfg = config_from_text(TINY_INI)
    for name, kw in sections.items():
        cfg = replace(cfg, **{name: replace(getattr(cfg, name), **kw)})
    return cfg.validate()


# ---------------------------------------------------------------------------
# configuration


def test_config_text_round_trip():
    cfg = tiny(loss={"kind": "supervised", "label_mode": "multi"})
    back = config_from_text(config_to_text(cfg))
    assert back == cfg and back.hash() == cfg.hash()


def test_hash_changes_with_any_value():
    assert tiny().hash() != tiny(optim={"lr": 2e-3}).hash()


@pytest.mark.parametrize("text, match", [
    ("[model]\nwidht = 3\n", r"unknown config key \[model\] widht"),
    ("[schedule]\nsteps = 3\n", r"unknown config section \[schedule\]"),
    ("[mask]\nkind = two_streams\n[loss]\ninclude_fusion_terms = true\n", "two_streams has none"),
    ("[run]\nmixed_unimodal = true\n", "needs supervised"),
    ("[optim]\nname = lamb\n", "adam or sgd"),
    ("[loss]\ninclude_fusion_terms = maybe\n", "boolean"),
    ("[data]\naudio_shape = 4,4\n", "shapes must match"),
])
def test_invalid_configs_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        config_from_text(text)


# ---------------------------------------------------------------------------
# training


def test_mixed_unimodal_batches_drop_one_modality():
    cfg = tiny(loss={"kind": "supervised"}, run={"mixed_unimodal": True})
    gen = SynthGenerator(cfg.data)
    seen = set()
    for step in range(20):
        b = batch_for_step(gen, cfg, step)
        assert sum(b.present.values()) == 1
        absent = "video" if not b.present["video"] else "audio"
        assert not np.any(getattr(b, absent))
        seen.add(absent)
    assert seen == {"video", "audio"}


def test_mixed_unimodal_skips_heads_of_absent_modality():
    cfg = tiny(loss={"kind": "supervised"}, run={"mixed_unimodal": True})
    tr = Trainer(cfg)
    before = {k: v.copy() for k, v in tr.params.items()}
    # step 0: whichever modality is absent, its head must receive no gradient
    absent = [k for k, v in batch_for_step(tr.gen, cfg, 0).present.items() if not v][0]
    tr.optimizer = type(tr.optimizer)(weight_decay=0.0)
    tr.train_step()
    head = [k for k in before if k.startswith(f"head.{absent}.")]
    assert head and all(np.array_equal(before[k], tr.params[k]) for k in head)
    other = "audio" if absent == "video" else "video"
    assert any(not np.array_equal(before[k], tr.params[k]) for k in before if k.startswith(f"head.{other}."))


def test_training_is_bit_reproducible():
    a, b = Trainer(tiny()), Trainer(tiny())
    assert a.fit() == b.fit()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_seed_changes_the_run():
    a, b = Trainer(tiny()), Trainer(tiny(run={"seed": 6}))
    assert a.fit() != b.fit()


def test_resume_continues_bit_identically(tmp_path):
    full = Trainer(tiny())
    full.fit()
    first = Trainer(tiny())
    first.fit(3)
    checkpoint.save(tmp_path / "c.npz", first.cfg, first.params, first.optimizer.state_dict(), first.step)
    rest = Trainer.resume(checkpoint.load(tmp_path / "c.npz"))
    rest.fit()
    assert first.log + rest.log == full.log
    assert all(np.array_equal(rest.params[k], full.params[k]) for k in full.params)


def test_checkpoint_rejects_mismatched_shapes(tmp_path):
    cfg = tiny()
    tr = Trainer(cfg)
    checkpoint.save(tmp_path / "c.npz", cfg, tr.params, tr.optimizer.state_dict(), 0)
    wider = tiny(model={"width": 24})
    with pytest.raises(checkpoint.CheckpointError, match="shape"):
        checkpoint.load(tmp_path / "c.npz", wider)


def test_shape_diff_lists_every_difference():
    lines = checkpoint.shape_diff({"a": (2,), "b": (3, 3)}, {"b": (3, 4), "c": (1,)})
    text = "\n".join(lines)
    assert "a" in text and "c" in text and "(3, 3)" in text and "(3, 4)" in text


def test_probe_is_deterministic_and_covers_heads():
    cfg = tiny()
    params = init_run_params(cfg)
    a, b = linear_probe(params, cfg), linear_probe(params, cfg)
    assert a == b
    assert set(a) == {"video", "audio", "fusion", "global", "average"}
    assert all(0.0 <= v <= 1.0 for v in a.values())


def test_probe_rejects_missing_heads():
    cfg = tiny(model={"mask": replace(tiny().model.mask, kind="two_streams")})
    with pytest.raises(ConfigError, match="fusion"):
        linear_probe(init_run_params(cfg), cfg, ["fusion"])


# ---------------------------------------------------------------------------
# command line


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def run_cli(*argv):
    return cli.main(["-q", *map(str, argv)])


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_pretrain_writes_logs_and_checkpoint(ini, tmp_path):
    out = tmp_path / "run"
    assert run_cli("pretrain", "--config", ini, "--out", out) == 0
    lines = read_lines(out / "metrics.jsonl")
    assert lines[0]["event"] == "start" and lines[0]["config_hash"] == config_from_text(TINY_INI).hash()
    assert [r["step"] for r in lines[1:]] == list(range(6))
    ck = checkpoint.load(out / "checkpoint.npz")
    assert ck.step == 6 and ck.config == config_from_text(TINY_INI)


def test_pretrain_logs_are_bit_identical(ini, tmp_path):
    for name in ("a", "b"):
        assert run_cli("pretrain", "--config", ini, "--out", tmp_path / name) == 0
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
    assert (tmp_path / "a/checkpoint.npz").read_bytes() == (tmp_path / "b/checkpoint.npz").read_bytes()


def test_seed_flag_overrides_config(ini, tmp_path):
    run_cli("pretrain", "--config", ini, "--seed", 9, "--out", tmp_path / "s")
    assert checkpoint.load(tmp_path / "s/checkpoint.npz").config.run.seed == 9


def test_cli_resume_matches_uninterrupted_run(ini, tmp_path):
    text = TINY_INI.replace("[run]\n", "[run]\ncheckpoint_every = 3\n")
    ini.write_text(text)
    run_cli("pretrain", "--config", ini, "--out", tmp_path / "full")
    assert run_cli("pretrain", "--resume", tmp_path / "full/checkpoint-000003.npz", "--out", tmp_path / "rest") == 0
    full = read_lines(tmp_path / "full/metrics.jsonl")[1:]
    rest = read_lines(tmp_path / "rest/metrics.jsonl")
    assert rest[0]["start_step"] == 3
    assert rest[1:] == full[3:]


def test_unknown_key_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nwidht = 8\n")
    assert run_cli("pretrain", "--config", bad, "--out", tmp_path / "x") == 2


def test_probe_command(ini, tmp_path, capsys):
    run_cli("pretrain", "--config", ini, "--out", tmp_path / "r")
    assert run_cli("probe", "--checkpoint", tmp_path / "r/checkpoint.npz", "--heads", "video,global",
                   "--out", tmp_path / "p") == 0
    result = json.loads((tmp_path / "p/probe.json").read_text())
    assert set(result["accuracy"]) == {"video", "global", "average"}
    assert "video" in capsys.readouterr().out


def test_dump_masks_matches_library(ini, tmp_path):
    assert run_cli("dump-masks", "--config", ini, "--out", tmp_path) == 0
    cfg = config_from_text(TINY_INI)
    from zorro.masking import build_self_mask

    grid = from_text((tmp_path / "masks/self_layer0.txt").read_text())
    assert np.array_equal(grid, build_self_mask(cfg.model.input_layout, cfg.model.mask, 0))
    meta = json.loads((tmp_path / "masks/layout.json").read_text())
    assert meta["kind"] == "zorro" and meta["layers"] == 2
    assert (tmp_path / "masks/self_layer1.txt").exists() and (tmp_path / "masks/reachability.txt").exists()


def test_verify_passes_and_writes_report(tmp_path):
    assert run_cli("verify", "--trials", 2, "--skip-collapse", "--out", tmp_path) == 0
    records = verification.read_report(tmp_path / "report.jsonl")
    assert records and all(r["pass"] for r in records)
    assert {"name", "config", "metrics", "pass"} <= set(records[0])


def test_verify_catches_a_leaky_mask(tmp_path, monkeypatch):
    # mutation: let the first video token attend a fusion token
    import zorro.models.vit as vit

    real = vit.build_self_mask

    def leaky(layout, cfg, layer=0):
        m = real(layout, cfg, layer).copy()
        if layout.n_fusion:
            m[0, layout.fusion.start] = 1
        return m

    monkeypatch.setattr(vit, "build_self_mask", leaky)
    assert run_cli("verify", "--trials", 2, "--skip-collapse", "--out", tmp_path) == 1
    failed = [r for r in verification.read_report(tmp_path / "report.jsonl") if not r["pass"]]
    assert any(r["name"] == "isolation" and r["config"]["kind"] == "zorro" and r["config"]["arch"] == "vit"
               for r in failed)


# ---------------------------------------------------------------------------
# slow: collapse behaviour beyond the acceptance suite


@pytest.mark.slow
def test_fusion_terms_avoid_collapse():
    [rec] = verification.run_collapse_experiment(kinds=("zorro",), include_fusion_terms=True)
    assert rec["pass"], rec["metrics"]


@pytest.mark.slow
def test_uncorrelated_data_probes_at_chance_everywhere():
    recs = verification.run_collapse_experiment(correlation=0.0, steps=500)
    for rec in recs:
        m = rec["metrics"]
        assert abs(m["probe"]["average"] - m["chance"]) <= 5 * m["sigma"], rec


def test_untrained_backbone_probes_near_chance():
    cfg = verification.collapse_run_config("zorro", steps=1)
    chance, sd = verification.chance_band(cfg.data.n_classes, cfg.run.probe_eval)
    for head, acc in linear_probe(init_run_params(cfg), cfg).items():
        assert abs(acc - chance) <= 5 * sd, (head, acc)
