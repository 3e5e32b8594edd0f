"""
Pretrain, checkpoint, probe, resume
===================================

A small contrastive run on synthetic paired data, written the way the
command line does it. Pass a step count to make it longer.
"""

import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from zorro import checkpoint
from zorro.train import RunConfig, Trainer, linear_probe

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 40
cfg = RunConfig()
cfg = replace(cfg, optim=replace(cfg.optim, steps=steps))
print("config hash", cfg.hash())

trainer = Trainer(cfg)
trainer.fit(steps // 2)
print(f"step {trainer.step}: loss {trainer.log[-1]['loss']:.3f}")

# %%
# Save half-way, then continue in a fresh trainer built from the file.

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "half.npz"
    checkpoint.save(path, cfg, trainer.params, trainer.optimizer.state_dict(), trainer.step)
    resumed = Trainer.resume(checkpoint.load(path))

trainer.fit()
resumed.fit()
same = all(np.array_equal(trainer.params[k], resumed.params[k]) for k in trainer.params)
print(f"step {trainer.step}: loss {trainer.log[-1]['loss']:.3f}; resumed run bit-identical: {same}")

# %%
# Linear probes on the frozen outputs. "average" probes the mean of the
# four head outputs. Chance is 1 / n_classes.

for head, acc in linear_probe(trainer.params, cfg).items():
    print(f"  probe {head:8s} {acc:.3f}")
print(f"  chance   {1 / cfg.data.n_classes:.3f}")
