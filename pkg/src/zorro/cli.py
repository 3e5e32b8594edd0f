"""Command-line entry point: ``zorro {pretrain,probe,verify,dump-masks}``.

Every command takes ``--config PATH`` (INI with sections model, mask, loss,
data, optim, run; omitted keys keep their defaults), ``--seed N`` (overrides
``[run] seed``) and ``--out DIR``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint
from .masking import build_decoder_mask, layer_masks, reachability, to_text
from .train import ConfigError, RunConfig, Trainer, config_from_text, config_to_text, linear_probe, metrics_line

log = logging.getLogger("zorro")

CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.jsonl"


def load_config(path: str | None, seed: int | None) -> RunConfig:
    cfg = RunConfig() if path is None else config_from_text(Path(path).read_text(encoding="utf-8"))
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    return cfg.validate()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# pretrain


def cmd_pretrain(args) -> int:
    out = _out_dir(args)
    if args.resume:
        # the stored config is authoritative unless one is given explicitly;
        # either way parameter names and shapes are checked against it
        cfg = load_config(args.config, args.seed) if args.config else None
        ckpt = checkpoint.load(args.resume, cfg)
        cfg = ckpt.config
        trainer = Trainer.resume(ckpt)
    else:
        cfg = load_config(args.config, args.seed)
        trainer = Trainer(cfg)
    digest = cfg.hash()
    log.info("pretrain config_hash=%s start_step=%d steps=%d", digest, trainer.step, cfg.optim.steps)
    (out / "config.ini").write_text(config_to_text(cfg), encoding="utf-8")

    every = cfg.run.checkpoint_every
    with open(out / METRICS_NAME, "w", encoding="utf-8") as fh:
        fh.write(metrics_line({"event": "start", "config_hash": digest, "start_step": trainer.step}) + "\n")

        def on_step(tr, rec):
            fh.write(metrics_line(rec) + "\n")
            if every and tr.step % every == 0 and tr.step < cfg.optim.steps:
                checkpoint.save(out / f"checkpoint-{tr.step:06d}.npz", cfg, tr.params,
                                tr.optimizer.state_dict(), tr.step)

        trainer.fit(callback=on_step)
    checkpoint.save(out / CHECKPOINT_NAME, cfg, trainer.params, trainer.optimizer.state_dict(), trainer.step)
    last = trainer.log[-1] if trainer.log else None
    if last is not None and last.get("diverged"):
        log.error("non-finite loss at step %d", last["step"])
        return 1
    log.info("done config_hash=%s step=%d final_loss=%s", digest, trainer.step, last and last["loss"])
    return 0


# ---------------------------------------------------------------------------
# probe


def cmd_probe(args) -> int:
    out = _out_dir(args)
    ckpt = checkpoint.load(args.checkpoint)
    cfg = ckpt.config
    if args.config is not None:
        # probe settings may change, the backbone must not
        cfg = load_config(args.config, args.seed)
        ckpt = checkpoint.load(args.checkpoint, cfg)
    elif args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    heads = args.heads.split(",") if args.heads else None
    log.info("probe config_hash=%s checkpoint=%s", cfg.hash(), args.checkpoint)
    acc = linear_probe(ckpt.params, cfg, heads)
    result = {"config_hash": cfg.hash(), "step": ckpt.step, "accuracy": acc}
    (out / "probe.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    width = max(len(h) for h in acc)
    for head, value in acc.items():
        print(f"{head:<{width}}  {value:.4f}")
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from . import verification

    out = _out_dir(args)
    cfg = load_config(args.config, args.seed)
    seed = cfg.run.seed
    log.info("verify config_hash=%s seed=%d", cfg.hash(), seed)
    records = verification.default_suite(seed=seed, trials=args.trials, collapse_steps=args.collapse_steps,
                                         collapse=not args.skip_collapse, log=log.info)
    path = out / "report.jsonl"
    verification.write_report(path, records)
    failed = [r for r in records if not r["pass"]]
    for r in failed:
        log.error("FAIL %s %s %s", r["name"], json.dumps(r["config"], sort_keys=True), json.dumps(r["metrics"], sort_keys=True))
    print(f"{len(records) - len(failed)}/{len(records)} checks passed; report at {path}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# dump-masks


def cmd_dump_masks(args) -> int:
    out = _out_dir(args) / "masks"
    out.mkdir(exist_ok=True)
    cfg = load_config(args.config, args.seed)
    model = cfg.model
    layout = model.input_layout
    if model.arch != "vit":
        log.warning("%s routes streams structurally; the grids describe the equivalent token-level masks", model.arch)
    masks = layer_masks(layout, model.mask, model.depth)
    for i, m in enumerate(masks):
        (out / f"self_layer{i}.txt").write_text(to_text(m), encoding="utf-8")
    (out / "decoder.txt").write_text(to_text(build_decoder_mask(layout, model.mask)), encoding="utf-8")
    (out / "reachability.txt").write_text(to_text(reachability(masks)), encoding="utf-8")
    meta = {"kind": model.mask.kind, "layout": [layout.n_video, layout.n_audio, layout.n_fusion],
            "fusion_start_layer": model.mask.fusion_start_layer, "layers": model.depth,
            "config_hash": cfg.hash()}
    (out / "layout.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %d layer masks to %s", len(masks), out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, metavar="N", help="overrides [run] seed")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")

    parser = argparse.ArgumentParser(prog="zorro", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="train a backbone, write checkpoint and metrics")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint written by pretrain")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", parents=[common], help="linear probes on a frozen checkpoint")
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("--heads", help="comma-separated subset of video,audio,fusion,global")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("verify", parents=[common], help="run the verification suite")
    p.add_argument("--trials", type=int, default=50, help="random trials per isolation check")
    p.add_argument("--collapse-steps", type=int, default=3000, help="training steps per collapse run")
    p.add_argument("--skip-collapse", action="store_true", help="skip the (slow) collapse experiment")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dump-masks", parents=[common], help="write the 0/1 attention grids as text")
    p.set_defaults(func=cmd_dump_masks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
