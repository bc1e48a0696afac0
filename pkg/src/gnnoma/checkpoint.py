"""Model checkpoints: parameters in ``params.npz``, everything else in JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaMismatch
from .model import ModelConfig
from .nn import ParamStore
from .training import LossHistory

CHECKPOINT_VERSION = 1
PARAMS_FILE = "params.npz"
META_FILE = "checkpoint.json"


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: ParamStore
    meta: dict = field(default_factory=dict)
    history: LossHistory | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = list(ckpt.params)
    np.savez(path / PARAMS_FILE, **{f"p{i}": ckpt.params[n].data for i, n in enumerate(names)})
    doc = {
        "version": CHECKPOINT_VERSION,
        "model": ckpt.model_cfg.to_dict(),
        "param_names": names,
        "meta": ckpt.meta,
        "history": None if ckpt.history is None else ckpt.history.to_dict(),
    }
    (path / META_FILE).write_text(json.dumps(doc, indent=2))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not (path / META_FILE).exists():
        raise ConfigError(f"no checkpoint at {path}")
    doc = json.loads((path / META_FILE).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"checkpoint version {doc.get('version')!r}")
    with np.load(path / PARAMS_FILE) as z:
        arrays = {n: z[f"p{i}"] for i, n in enumerate(doc["param_names"])}
    hist = None if doc["history"] is None else LossHistory.from_dict(doc["history"])
    return Checkpoint(ModelConfig.from_dict(doc["model"]), ParamStore.from_arrays(arrays),
                      doc["meta"], hist)


def write_loss_csv(path, history: LossHistory):
    cols = ["train_total", "train_shape", "train_frequency", "train_damping"]
    if history.val_total:
        cols += ["val_total", "val_shape", "val_frequency", "val_damping"]
    lines = ["epoch," + ",".join(cols)]
    for e in range(len(history)):
        lines.append(f"{e + 1}," + ",".join(repr(getattr(history, c)[e]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
