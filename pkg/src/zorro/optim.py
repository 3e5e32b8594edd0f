"""Parameter update rules and learning-rate schedules.

Parameters live in plain ``name -> ndarray`` dicts; optimizers update them
in place from a matching dict of gradients.
"""

from __future__ import annotations

import math

import numpy as np


def cosine_schedule(step: int, total_steps: int, peak_lr: float, warmup_steps: int = 0, final_lr: float = 0.0) -> float:
    """Linear warmup to ``peak_lr`` then cosine decay to ``final_lr``."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    t = min(max(step - warmup_steps, 0), span) / span
    return final_lr + 0.5 * (peak_lr - final_lr) * (1.0 + math.cos(math.pi * t))


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1**t
        c2 = 1.0 - self.b2**t
        for name in sorted(params):
            g = grads.get(name)
            if g is None:
                continue
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= lr * update

    def state_dict(self) -> dict:
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"][0])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v/")}


class SGD:
    """SGD with heavy-ball momentum."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_count = 0
        self.buf: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.step_count += 1
        for name in sorted(params):
            g = grads.get(name)
            if g is None:
                continue
            p = params[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            b = self.buf.get(name)
            if b is None:
                b = self.buf[name] = np.array(g, copy=True)
            else:
                b *= self.momentum
                b += g
            p -= lr * b

    def state_dict(self) -> dict:
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        out.update({f"buf/{k}": v for k, v in self.buf.items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"][0])
        self.buf = {k[4:]: np.array(v) for k, v in state.items() if k.startswith("buf/")}
