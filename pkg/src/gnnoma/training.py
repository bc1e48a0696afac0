"""Mini-batch Adam training and K-fold cross-validation."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ConfigError, EmptyDataset, ShapeMismatch, TooFewRecords
from .model import (GraphSample, LossTerms, LossWeights, ModelConfig, collate, forward,
                    init_model, loss_fn)
from .nn import AdamState, ParamStore, adam_step, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    patience: int = 0  # epochs without validation improvement before stopping; 0 = off

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and patience >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class LossHistory:
    """Per-epoch loss curves; ``val_*`` stay empty without a validation set."""

    train_total: list[float] = field(default_factory=list)
    train_shape: list[float] = field(default_factory=list)
    train_frequency: list[float] = field(default_factory=list)
    train_damping: list[float] = field(default_factory=list)
    val_total: list[float] = field(default_factory=list)
    val_shape: list[float] = field(default_factory=list)
    val_frequency: list[float] = field(default_factory=list)
    val_damping: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_total)

    def append(self, prefix: str, t: LossTerms):
        for name in ("total", "shape", "frequency", "damping"):
            getattr(self, f"{prefix}_{name}").append(getattr(t, name))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossHistory":
        return cls(**d)


def _check_dataset(samples: list[GraphSample]):
    if not samples:
        raise EmptyDataset("no training records")
    m = {s.features.shape[1] for s in samples}
    k = {s.targets.k for s in samples}
    if len(m) != 1 or len(k) != 1:
        raise ShapeMismatch("records disagree on PSD width or mode count")


def evaluate_loss(cfg: ModelConfig, params: ParamStore, samples: list[GraphSample],
                  weights: LossWeights = LossWeights()) -> LossTerms:
    with ag.no_grad():
        out = forward(cfg, params, collate(samples))
        _, terms = loss_fn(out, [s.targets for s in samples], weights)
    return terms


HEAD_WEIGHT_SCALE = 0.1


def _inverse_activation(name: str, y: np.ndarray) -> np.ndarray:
    if name == "softplus":
        return y + np.log(-np.expm1(-y))
    if name == "sigmoid":
        y = np.clip(y, 1e-6, 1 - 1e-6)
        return np.log(y / (1 - y))
    return y


def init_heads_from_targets(cfg: ModelConfig, params: ParamStore,
                            samples: list[GraphSample]):
    """Start each regression head at the mean training target.

    The last layer of the F and Z heads gets a bias equal to the inverse
    activation of the per-mode target mean and a shrunken weight, so the first
    updates are not spent swinging the outputs across orders of magnitude.
    """
    last = cfg.mlp_layers - 1
    F = np.mean([s.targets.frequencies for s in samples], axis=0)
    Z = np.mean([s.targets.damping_ratios for s in samples], axis=0)
    for head, act, mean in (("mlp2", cfg.freq_activation, F),
                            ("mlp3", cfg.damping_activation, Z)):
        params[f"{head}.{last}.weight"].data *= HEAD_WEIGHT_SCALE
        params[f"{head}.{last}.bias"].data[:] = _inverse_activation(act, mean)


def train(samples: list[GraphSample], model_cfg: ModelConfig, train_cfg: TrainConfig,
          validation: list[GraphSample] | None = None, params: ParamStore | None = None,
          progress_every: int = 0) -> tuple[ParamStore, LossHistory]:
    """Train from scratch (or from ``params``) with seeded epoch shuffling.

    Per-epoch training terms are the graph-weighted mean of the mini-batch losses
    seen during that epoch. With ``validation`` and ``train_cfg.patience > 0``
    training stops once the validation loss has not improved for ``patience``
    epochs, and the best parameters are returned.
    """
    _check_dataset(samples)
    if samples[0].features.shape[1] != model_cfg.psd_dim:
        raise ShapeMismatch("PSD width does not match model config")
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_model(model_cfg, rng)
        init_heads_from_targets(model_cfg, params, samples)
    state = AdamState()
    hist = LossHistory()
    n = len(samples)
    bs = train_cfg.batch_size
    stopping = bool(validation) and train_cfg.patience > 0
    best, best_epoch, best_arrays = np.inf, 0, None
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        acc = np.zeros(4)
        for start in range(0, n, bs):
            chunk = [samples[i] for i in order[start:start + bs]]
            out = forward(model_cfg, params, collate(chunk))
            total, terms = loss_fn(out, [s.targets for s in chunk], train_cfg.weights)
            grads = backward(total, params)
            adam_step(params, grads, state, train_cfg.lr, train_cfg.beta1,
                      train_cfg.beta2, train_cfg.eps)
            acc += len(chunk) * np.array([terms.total, terms.shape, terms.frequency,
                                          terms.damping])
        hist.append("train", LossTerms(*(acc / n)))
        if validation:
            hist.append("val", evaluate_loss(model_cfg, params, validation,
                                             train_cfg.weights))
        if progress_every and (epoch + 1) % progress_every == 0:
            log.info("epoch %d train %.5f val %s", epoch + 1, hist.train_total[-1],
                     f"{hist.val_total[-1]:.5f}" if validation else "-")
        if stopping:
            if hist.val_total[-1] < best:
                best, best_epoch, best_arrays = hist.val_total[-1], epoch, params.arrays()
            elif epoch - best_epoch >= train_cfg.patience:
                log.info("stopping at epoch %d, best validation at %d", epoch + 1,
                         best_epoch + 1)
                break
    if stopping and best_arrays is not None:
        for name, arr in best_arrays.items():
            params[name].data[...] = arr
    return params, hist


@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_val: int
    final_val_loss: float
    wall_time: float
    history: LossHistory = field(repr=False)


@dataclass
class KFoldResult:
    folds: list[FoldResult]

    @property
    def val_losses(self) -> np.ndarray:
        return np.array([f.final_val_loss for f in self.folds])

    @property
    def wall_times(self) -> np.ndarray:
        return np.array([f.wall_time for f in self.folds])

    def summary(self) -> dict:
        v, t = self.val_losses, self.wall_times
        sd = lambda a: float(np.std(a, ddof=1)) if len(a) > 1 else 0.0  # noqa: E731
        return {"val_loss_mean": float(v.mean()), "val_loss_sd": sd(v),
                "time_mean": float(t.mean()), "time_sd": sd(t)}


def fold_indices(n: int, folds: int) -> list[np.ndarray]:
    """Contiguous folds of ``n // folds`` records; the last takes the remainder."""
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if n < folds:
        raise TooFewRecords(f"{n} records cannot fill {folds} folds")
    size = n // folds
    bounds = [i * size for i in range(folds)] + [n]
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(folds)]


def kfold_cv(samples: list[GraphSample], model_cfg: ModelConfig, train_cfg: TrainConfig,
             folds: int = 5) -> KFoldResult:
    results = []
    for f, val_idx in enumerate(fold_indices(len(samples), folds)):
        val_set = set(val_idx.tolist())
        tr = [s for i, s in enumerate(samples) if i not in val_set]
        va = [samples[i] for i in val_idx]
        t0 = time.perf_counter()
        params, hist = train(tr, model_cfg, train_cfg, validation=va)
        wall = time.perf_counter() - t0
        final = hist.val_total[-1] if hist.val_total else evaluate_loss(
            model_cfg, params, va, train_cfg.weights).total
        results.append(FoldResult(f, len(tr), len(va), final, wall, hist))
        log.info("fold %d: val %.5f in %.1fs", f, final, wall)
    return KFoldResult(results)
