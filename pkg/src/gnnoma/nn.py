"""MLP blocks, parameter storage, Adam and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeMismatch


class ParamStore(dict):
    """Ordered ``name -> Tensor`` map of trainable parameters."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise ConfigError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self[name] = t
        return t

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    @classmethod
    def from_arrays(cls, arrays) -> "ParamStore":
        ps = cls()
        for k, v in arrays.items():
            ps.add(k, v)
        return ps

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def n_scalars(self) -> int:
        return int(np.sum([t.data.size for t in self.values()]))


@dataclass
class MlpSpec:
    widths: list[int]
    hidden: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ConfigError("an MLP needs at least one hidden layer")
        if any(w < 1 for w in self.widths):
            raise ConfigError("layer widths must be positive")
        for act in (self.hidden, self.output):
            if act not in ag.ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator):
    # Kaiming-uniform for ReLU layers, zero bias
    bound = np.sqrt(6.0 / fan_in)
    store.add(f"{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    store.add(f"{name}.bias", np.zeros((1, fan_out)))


def init_mlp(spec: MlpSpec, store: ParamStore, prefix: str, rng: np.random.Generator):
    for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        init_linear(store, f"{prefix}.{i}", a, b, rng)


def linear(x, params: ParamStore, name: str) -> Tensor:
    return ag.matmul(x, params[f"{name}.weight"]) + params[f"{name}.bias"]


def mlp_forward(spec: MlpSpec, params: ParamStore, prefix: str, x) -> Tensor:
    x = ag.tensor(x)
    if x.data.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise ShapeMismatch(f"{prefix}: input {x.shape}, expected (*, {spec.widths[0]})")
    hidden = ag.ACTIVATIONS[spec.hidden]
    for i in range(spec.n_layers):
        x = linear(x, params, f"{prefix}.{i}")
        x = hidden(x) if i < spec.n_layers - 1 else ag.ACTIVATIONS[spec.output](x)
    return x


def backward(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every parameter; zeros if unreachable."""
    params.zero_grad()
    loss.backward()
    return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for k, t in params.items()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} vs {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def grad_check(model_fn: Callable[[ParamStore], Tensor], params: ParamStore,
               probe_count: int = 20, rng: np.random.Generator | None = None,
               eps: float = 1e-5, floor: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Probes whose +/- ``eps`` evaluations flip the sign of any (leaky) ReLU input
    sit on a kink, where finite differences are meaningless, and are skipped.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grads = backward(model_fn(params), params)
    names = list(params)
    sizes = np.array([params[n].data.size for n in names])
    worst = 0.0
    with ag.no_grad():
        for _ in range(probe_count):
            k = int(rng.choice(len(names), p=sizes / sizes.sum()))
            name = names[k]
            flat = params[name].data.reshape(-1)
            i = int(rng.integers(flat.size))
            orig = flat[i]
            flat[i] = orig + eps
            with ag.record_kinks() as kp:
                fp = float(model_fn(params).data)
            flat[i] = orig - eps
            with ag.record_kinks() as km:
                fm = float(model_fn(params).data)
            flat[i] = orig
            if any(not np.array_equal(a, b) for a, b in zip(kp, km)):
                continue
            fd = (fp - fm) / (2 * eps)
            an = grads[name].reshape(-1)[i]
            err = abs(an - fd) / max(abs(an), abs(fd), floor)
            worst = max(worst, err)
    return worst
