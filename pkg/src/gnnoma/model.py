"""GNN regressor from node PSDs to frequencies, damping ratios and |mode shapes|.

Pipeline per batch::

    PSD rows --MLP1--> H1 --3x message passing--> H3 --mean--> H2
    H2 --MLP2/softplus--> F,  H2 --MLP3/softplus--> Z,  H3 --MLP4/sigmoid--> |Phi|
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeMismatch, ZeroTarget
from .graph import GraphBatch
from .nn import MlpSpec, ParamStore, init_linear, init_mlp, mlp_forward
from .structural import ModalSolution


class Variant(str, enum.Enum):
    GRAPHSAGE = "GraphSAGE"
    GCN = "GCN"
    GAT = "GAT"


@dataclass
class ModelConfig:
    psd_dim: int
    variant: Variant = Variant.GRAPHSAGE
    mp_layers: int = 3
    hidden_dim: int = 64
    k: int = 4
    mlp_layers: int = 3
    encoder: bool = True
    message_passing: bool = True
    gat_slope: float = 0.2
    freq_activation: str = "softplus"
    damping_activation: str = "softplus"
    shape_activation: str = "sigmoid"

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.mp_layers < 1 or self.k < 1 or self.mlp_layers < 2:
            raise ConfigError("mp_layers >= 1, k >= 1 and mlp_layers >= 2 required")

    def mlp(self, n_in: int, n_out: int, output: str = "identity") -> MlpSpec:
        d = self.hidden_dim
        return MlpSpec([n_in] + [d] * (self.mlp_layers - 1) + [n_out], "relu", output)

    @property
    def trunk_input(self) -> int:
        return self.hidden_dim if self.encoder else self.psd_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class LossWeights:
    shape: float = 2.0
    frequency: float = 1.0
    damping: float = 1.0

    def __post_init__(self):
        w = (self.shape, self.frequency, self.damping)
        if min(w) < 0 or max(w) == 0:
            raise ConfigError("loss weights must be nonnegative and not all zero")


@dataclass
class ModalEstimate:
    frequencies: np.ndarray
    damping_ratios: np.ndarray
    mode_shapes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.frequencies)


@dataclass
class GraphSample:
    """Model-ready graph: normalized PSD rows, edges and (optional) targets."""

    features: np.ndarray
    edges: np.ndarray
    targets: ModalSolution | None = None

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


@dataclass
class ModelOutput:
    frequencies: Tensor  # (B, k)
    damping_ratios: Tensor  # (B, k)
    mode_shapes: Tensor  # (sum N, k)
    batch: GraphBatch = field(repr=False)

    def estimates(self) -> list[ModalEstimate]:
        F = self.frequencies.data
        Z = self.damping_ratios.data
        shapes = self.batch.split_nodes(self.mode_shapes.data)
        return [ModalEstimate(F[b].copy(), Z[b].copy(), shapes[b].copy())
                for b in range(self.batch.n_graphs)]


def collate(samples: list[GraphSample]) -> GraphBatch:
    return GraphBatch.from_graphs([(s.features, s.edges) for s in samples])


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    d = cfg.hidden_dim
    if cfg.encoder:
        init_mlp(cfg.mlp(cfg.psd_dim, d), store, "mlp1", rng)
    if cfg.message_passing:
        for layer in range(cfg.mp_layers):
            n_in = cfg.trunk_input if layer == 0 else d
            p = f"gnn.{layer}"
            if cfg.variant is Variant.GRAPHSAGE:
                init_linear(store, f"{p}.self", n_in, d, rng)
                init_linear(store, f"{p}.nbr", n_in, d, rng)
                del store[f"{p}.nbr.bias"]
            elif cfg.variant is Variant.GCN:
                init_linear(store, f"{p}.lin", n_in, d, rng)
            else:
                init_linear(store, f"{p}.lin", n_in, d, rng)
                bound = np.sqrt(6.0 / (d + 1))
                store.add(f"{p}.att_src", rng.uniform(-bound, bound, size=(d, 1)))
                store.add(f"{p}.att_dst", rng.uniform(-bound, bound, size=(d, 1)))
    else:
        init_mlp(cfg.mlp(cfg.trunk_input, d, "relu"), store, "nodewise", rng)
    init_mlp(cfg.mlp(d, cfg.k, cfg.freq_activation), store, "mlp2", rng)
    init_mlp(cfg.mlp(d, cfg.k, cfg.damping_activation), store, "mlp3", rng)
    init_mlp(cfg.mlp(d, cfg.k, cfg.shape_activation), store, "mlp4", rng)
    return store


def encode(cfg: ModelConfig, params: ParamStore, batch: GraphBatch) -> Tensor:
    x = Tensor(batch.features)
    if x.shape[1] != cfg.psd_dim:
        raise ShapeMismatch(f"features have width {x.shape[1]}, model expects {cfg.psd_dim}")
    if not cfg.encoder:
        return x
    return mlp_forward(cfg.mlp(cfg.psd_dim, cfg.hidden_dim), params, "mlp1", x)


def _sage_layer(params, p, batch, h):
    nbr = ag.spmm(batch.mean_neighbors, h)
    return ag.relu(ag.matmul(h, params[f"{p}.self.weight"])
                   + ag.matmul(nbr, params[f"{p}.nbr.weight"])
                   + params[f"{p}.self.bias"])


def _gcn_layer(params, p, batch, h):
    hw = ag.matmul(h, params[f"{p}.lin.weight"])
    return ag.relu(ag.spmm(batch.gcn_norm, hw) + params[f"{p}.lin.bias"])


def _gat_layer(params, p, batch, h, slope):
    s = ag.matmul(h, params[f"{p}.lin.weight"])
    score_src = ag.matmul(s, params[f"{p}.att_src"])  # (N, 1)
    score_dst = ag.matmul(s, params[f"{p}.att_dst"])
    e = ag.leaky_relu(ag.spmm(batch.gather_src, score_src)
                      + ag.spmm(batch.gather_dst, score_dst), slope)  # (E, 1)
    # softmax over the incoming edges of each destination; the shift is a constant
    _, dst = batch.attention_edges
    shift = np.full(batch.n_nodes, -np.inf)
    np.maximum.at(shift, dst, e.data[:, 0])
    ex = ag.exp(e - shift[dst][:, None])
    denom = ag.spmm(batch.scatter_dst, ex)  # (N, 1)
    alpha = ex / ag.spmm(batch.gather_dst, denom)
    msg = ag.spmm(batch.gather_src, s) * alpha  # (E, d)
    return ag.relu(ag.spmm(batch.scatter_dst, msg) + params[f"{p}.lin.bias"])


def message_pass(cfg: ModelConfig, params: ParamStore, batch: GraphBatch, h1: Tensor) -> Tensor:
    if h1.shape[0] != batch.n_nodes or h1.shape[1] != cfg.trunk_input:
        raise ShapeMismatch(f"H1 has shape {h1.shape}")
    if not cfg.message_passing:
        return mlp_forward(cfg.mlp(cfg.trunk_input, cfg.hidden_dim, "relu"), params,
                           "nodewise", h1)
    h = h1
    for layer in range(cfg.mp_layers):
        p = f"gnn.{layer}"
        if cfg.variant is Variant.GRAPHSAGE:
            h = _sage_layer(params, p, batch, h)
        elif cfg.variant is Variant.GCN:
            h = _gcn_layer(params, p, batch, h)
        else:
            h = _gat_layer(params, p, batch, h, cfg.gat_slope)
    return h


def readout(batch: GraphBatch, h3: Tensor) -> Tensor:
    return ag.spmm(batch.pool, h3)


def forward(cfg: ModelConfig, params: ParamStore, batch: GraphBatch) -> ModelOutput:
    h1 = encode(cfg, params, batch)
    h3 = message_pass(cfg, params, batch, h1)
    h2 = readout(batch, h3)
    d, k = cfg.hidden_dim, cfg.k
    F = mlp_forward(cfg.mlp(d, k, cfg.freq_activation), params, "mlp2", h2)
    Z = mlp_forward(cfg.mlp(d, k, cfg.damping_activation), params, "mlp3", h2)
    Phi = mlp_forward(cfg.mlp(d, k, cfg.shape_activation), params, "mlp4", h3)
    return ModelOutput(F, Z, Phi, batch)


def predict(cfg: ModelConfig, params: ParamStore, samples: list[GraphSample]
            ) -> list[ModalEstimate]:
    with ag.no_grad():
        return forward(cfg, params, collate(samples)).estimates()


@dataclass
class LossTerms:
    total: float
    shape: float
    frequency: float
    damping: float


def stack_targets(targets: list[ModalSolution]):
    F = np.stack([t.frequencies for t in targets])
    Z = np.stack([t.damping_ratios for t in targets])
    if np.any(F == 0) or np.any(Z == 0):
        raise ZeroTarget("target frequencies and damping ratios must be nonzero")
    Phi = np.vstack([t.mode_shapes for t in targets])
    counts = np.array([t.mode_shapes.shape[0] for t in targets])
    return F, Z, Phi, counts


def loss_fn(out: ModelOutput, targets: list[ModalSolution],
            weights: LossWeights = LossWeights()) -> tuple[Tensor, LossTerms]:
    """Weighted shape MSE plus squared ratio errors of F and Z, averaged over graphs."""
    F, Z, Phi, counts = stack_targets(targets)
    B, k = F.shape
    if out.frequencies.shape != (B, k) or out.mode_shapes.shape != Phi.shape:
        raise ShapeMismatch("estimate and target shapes differ")
    node_w = np.repeat(1.0 / (k * counts * B), counts)[:, None]
    shape_term = ag.sum(ag.square(out.mode_shapes - Phi) * node_w)
    freq_term = ag.sum(ag.square(out.frequencies / F - 1.0)) * (1.0 / (k * B))
    damp_term = ag.sum(ag.square(out.damping_ratios / Z - 1.0)) * (1.0 / (k * B))
    total = (weights.shape * shape_term + weights.frequency * freq_term
             + weights.damping * damp_term)
    terms = LossTerms(float(total.data), float(shape_term.data), float(freq_term.data),
                      float(damp_term.data))
    return total, terms


def estimate_loss(est: ModalEstimate, target: ModalSolution,
                  weights: LossWeights = LossWeights()) -> float:
    """Single-graph loss on plain arrays."""
    if np.any(target.frequencies == 0) or np.any(target.damping_ratios == 0):
        raise ZeroTarget("target frequencies and damping ratios must be nonzero")
    N, k = target.mode_shapes.shape
    shape = np.sum((target.mode_shapes - est.mode_shapes) ** 2) / (k * N)
    freq = np.sum((est.frequencies / target.frequencies - 1.0) ** 2) / k
    damp = np.sum((est.damping_ratios / target.damping_ratios - 1.0) ** 2) / k
    return float(weights.shape * shape + weights.frequency * freq + weights.damping * damp)
