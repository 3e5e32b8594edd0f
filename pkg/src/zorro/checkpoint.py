"""Checkpoint archives: named float64 arrays plus the run config as text.

The container is an uncompressed ``.npz`` (a zip of ``.npy`` members, each
carrying its own shape and a ``<f8`` dtype). Member names are namespaced:

* ``param/<name>``  model parameters
* ``optim/<key>``   optimizer state (moments, step counter)
* ``state/step``    number of completed training steps
* ``config``        the INI text of the run config

Loading checks the parameter set against what the config would initialise
and lists every missing, unexpected or mis-shaped entry in one error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .train import RunConfig, config_from_text, config_to_text, init_run_params


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict
    optim_state: dict
    step: int


def save(path, config: RunConfig, params: dict, optim_state: dict | None = None, step: int = 0) -> None:
    members = {"config": np.array(config_to_text(config))}
    for name, value in params.items():
        members[f"param/{name}"] = np.asarray(value, dtype="<f8")
    for key, value in (optim_state or {}).items():
        members[f"optim/{key}"] = np.asarray(value, dtype="<f8")
    members["state/step"] = np.array([step], dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **members)


def shape_diff(expected: dict, found: dict) -> list:
    """Human-readable lines for every name/shape disagreement."""
    lines = []
    for name in sorted(set(expected) | set(found)):
        if name not in found:
            lines.append(f"missing    {name} {tuple(expected[name])}")
        elif name not in expected:
            lines.append(f"unexpected {name} {tuple(found[name])}")
        elif tuple(expected[name]) != tuple(found[name]):
            lines.append(f"shape      {name} expected {tuple(expected[name])} found {tuple(found[name])}")
    return lines


def load(path, config: RunConfig | None = None) -> Checkpoint:
    """Read a checkpoint; validate it against ``config`` (or the stored config)."""
    with np.load(path, allow_pickle=False) as z:
        members = {k: z[k] for k in z.files}
    if "config" not in members:
        raise CheckpointError(f"{path}: no config block")
    stored = config_from_text(str(members["config"]))
    config = stored if config is None else config
    params = {k[len("param/"):]: v for k, v in members.items() if k.startswith("param/")}
    optim_state = {k[len("optim/"):]: v for k, v in members.items() if k.startswith("optim/")}
    bad = [k for k, v in members.items() if k != "config" and v.dtype != np.dtype("<f8")]
    if bad:
        raise CheckpointError(f"{path}: non-float64 members {bad}")

    expected = {k: v.shape for k, v in init_run_params(config).items()}
    diff = shape_diff(expected, {k: v.shape for k, v in params.items()})
    if diff:
        raise CheckpointError(f"{path}: parameters do not match the config\n  " + "\n  ".join(diff))
    step = int(members["state/step"][0]) if "state/step" in members else 0
    return Checkpoint(config, params, optim_state, step)
