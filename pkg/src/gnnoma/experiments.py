"""Experiment suite: variants, ablation, missing nodes, noise, training size,
FDD comparison and cross-population transfer.

Every result carries a :class:`RunManifest` whose hash pins the full
configuration, seed and package version.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetRecord, generate_dataset, split
from .errors import ConfigError, OMAError
from .evaluation import PerModeStats, summarize
from .fdd import PeakPickConfig, fdd_identify
from .graph import feature_propagation, random_known_mask
from .model import GraphSample, ModelConfig, Variant, predict
from .nn import ParamStore
from .population import PopulationConfig, SupportKind
from .spectral import PsdSet, WelchConfig, inject_noise, normalize_psd_set, psd_from_history
from .training import TrainConfig, kfold_cv, train

log = logging.getLogger(__name__)

DISCARD_SECONDS = 5.0


class Experiment(str, enum.Enum):
    VARIANTS_TABLE = "variants_table"
    ABLATION = "ablation"
    MISSING_FEATURES = "missing_features"
    NOISE = "noise"
    TRAIN_SIZE = "train_size"
    FDD_COMPARE = "fdd_compare"
    CROSS_POPULATION = "cross_population"


NEEDS_HISTORY = {Experiment.NOISE, Experiment.FDD_COMPARE}
TRAIN_FRACTIONS = (0.1, 0.5, 1.0)
BATCH_SIZES = (8, 32, 64)


def _cantilever(pop: PopulationConfig) -> PopulationConfig:
    test = pop.count - pop.train_count
    return replace(pop, kind=SupportKind.CANTILEVERED, count=max(test, 1),
                   train_fraction=0.0, seed=pop.seed + 1)


@dataclass
class ExperimentConfig:
    experiment: Experiment
    population: PopulationConfig = field(default_factory=PopulationConfig)
    cross_population: PopulationConfig | None = None
    welch: WelchConfig = field(default_factory=WelchConfig)
    model: ModelConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    missing_ratios: tuple[float, ...] = (0.0, 0.66, 0.82)
    noise_level: float = 0.10
    train_sizes: tuple[int, ...] | None = None
    batch_sizes: tuple[int, ...] = BATCH_SIZES
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        self.experiment = Experiment(self.experiment)
        if self.cross_population is None:
            self.cross_population = _cantilever(self.population)
        if self.model is None:
            self.model = ModelConfig(psd_dim=self.welch.n_bins)
        if self.model.psd_dim != self.welch.n_bins:
            raise ConfigError("model psd_dim must equal the Welch bin count")
        if any(not 0.0 <= r < 1.0 for r in self.missing_ratios):
            raise ConfigError("missing ratios must lie in [0, 1)")
        n_train = self.population.train_count
        if self.train_sizes is None:
            self.train_sizes = tuple(max(1, int(round(f * n_train))) for f in TRAIN_FRACTIONS)
        self.train_sizes = tuple(int(s) for s in self.train_sizes)
        if any(s > n_train or s < 1 for s in self.train_sizes):
            raise ConfigError(f"train sizes must lie in [1, {n_train}]")
        if len(self.batch_sizes) != len(self.train_sizes):
            raise ConfigError("one batch size per train size required")
        if self.noise_level < 0:
            raise ConfigError("noise level must be >= 0")

    @classmethod
    def desk(cls, experiment, seed: int = 0, **kw) -> "ExperimentConfig":
        pop = kw.pop("population", PopulationConfig(count=100, seed=seed))
        tr = kw.pop("train", TrainConfig(epochs=1000, seed=seed))
        return cls(experiment, population=pop, train=tr, seed=seed, **kw)

    @classmethod
    def paper_scale(cls, experiment, seed: int = 0, **kw) -> "ExperimentConfig":
        pop = kw.pop("population", PopulationConfig(count=500, seed=seed))
        tr = kw.pop("train", TrainConfig(epochs=5000, seed=seed))
        return cls(experiment, population=pop, train=tr, seed=seed, **kw)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "population": self.population.to_dict(),
            "cross_population": self.cross_population.to_dict(),
            "welch": asdict(self.welch),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "missing_ratios": list(self.missing_ratios),
            "noise_level": self.noise_level,
            "train_sizes": list(self.train_sizes),
            "batch_sizes": list(self.batch_sizes),
            "folds": self.folds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        for key, build in (("population", PopulationConfig.from_dict),
                           ("cross_population", PopulationConfig.from_dict),
                           ("welch", lambda x: WelchConfig(**x)),
                           ("model", ModelConfig.from_dict),
                           ("train", TrainConfig.from_dict)):
            if d.get(key) is not None:
                kw[key] = build(d[key])
        for key in ("missing_ratios", "train_sizes", "batch_sizes"):
            if d.get(key) is not None:
                kw[key] = tuple(d[key])
        for key in ("noise_level", "folds", "seed"):
            if key in d:
                kw[key] = d[key]
        return cls(d["experiment"], **kw)


@dataclass
class RunManifest:
    config: dict
    version: str = __version__

    @property
    def hash(self) -> str:
        blob = json.dumps({"config": self.config, "version": self.version},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"hash": self.hash, "version": self.version, "config": self.config}


@dataclass
class ExperimentResult:
    experiment: Experiment
    manifest: RunManifest
    stats: dict[str, PerModeStats] = field(default_factory=dict)
    rows: dict[str, list[dict]] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "manifest": self.manifest.to_dict(),
            "stats": {k: v.to_dict() for k, v in self.stats.items()},
            "rows": self.rows,
            "info": self.info,
        }

    def markdown(self) -> str:
        out = [f"# {self.experiment.value}", "", f"run `{self.manifest.hash}`", ""]
        for name, table in self.rows.items():
            out += [f"**{name}**", "", _rows_markdown(table), ""]
        for name, st in self.stats.items():
            out += [st.to_markdown(name), ""]
        return "\n".join(out)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = {"run": self.manifest.hash}
        for name, st in self.stats.items():
            (out / f"{name}.csv").write_text(st.to_csv(tag))
        for name, table in self.rows.items():
            (out / f"{name}.csv").write_text(_rows_csv(table, tag))
        (out / "results.md").write_text(self.markdown())
        (out / "result.json").write_text(json.dumps(self.to_dict(), indent=2, default=float))
        (out / "manifest.json").write_text(json.dumps(self.manifest.to_dict(), indent=2))
        return out


def _rows_csv(rows: list[dict], tag: dict) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [f"# {k},{v}" for k, v in tag.items()] + [",".join(cols)]
    lines += [",".join(_fmt(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def _rows_markdown(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(_fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


# shared steps

def samples_of(records: list[DatasetRecord]) -> list[GraphSample]:
    return [r.sample() for r in records]


def masked_sample(rec: DatasetRecord, ratio: float, seed: int) -> GraphSample:
    """Hide ``ratio`` of the nodes, renormalize the rest, fill by propagation."""
    if ratio == 0:
        return rec.sample()
    rng = np.random.default_rng([seed, rec.index, int(round(ratio * 10_000))])
    edges = rec.structure.edges
    known = random_known_mask(rec.structure.n_nodes, ratio, rng, edges)
    psd = normalize_psd_set(PsdSet(rec.psd.values, rec.psd.freq_axis, known))
    filled = feature_propagation(edges, psd.values, known)
    return GraphSample(filled, edges, rec.targets)


def noisy_sample(rec: DatasetRecord, level: float, seed: int,
                 welch: WelchConfig = WelchConfig()) -> GraphSample:
    if rec.history is None:
        raise ConfigError(f"record {rec.index} has no time history")
    rng = np.random.default_rng([seed, rec.index, 2])
    hist = inject_noise(rec.history, level, rng)
    psd = normalize_psd_set(psd_from_history(hist, welch, DISCARD_SECONDS))
    return GraphSample(psd.values, rec.structure.edges, rec.targets)


def evaluate(model_cfg: ModelConfig, params: ParamStore,
             samples: list[GraphSample]) -> PerModeStats:
    est = predict(model_cfg, params, samples)
    return summarize(zip(est, [s.targets for s in samples]))


def train_main(cfg: ExperimentConfig, records: list[DatasetRecord]) -> ParamStore:
    params, _ = train(samples_of(split(records, "train")), cfg.model, cfg.train)
    return params


def gnn_identify_histories(model_cfg: ModelConfig, params: ParamStore,
                           records: list[DatasetRecord], welch: WelchConfig):
    """Time-history to modal estimate for a population; returns (estimates, seconds)."""
    t0 = time.perf_counter()
    samples = []
    for rec in records:
        psd = normalize_psd_set(psd_from_history(rec.history, welch, DISCARD_SECONDS))
        samples.append(GraphSample(psd.values, rec.structure.edges))
    est = predict(model_cfg, params, samples)
    return est, time.perf_counter() - t0


def fdd_population(records: list[DatasetRecord], welch: WelchConfig,
                   pick: PeakPickConfig = PeakPickConfig()):
    """FDD on every record; failures are kept per structure, never raised."""
    results, failures = [], []
    t0 = time.perf_counter()
    for rec in records:
        try:
            results.append((rec, fdd_identify(rec.history, welch, pick, discard=DISCARD_SECONDS)))
        except OMAError as exc:
            failures.append({"index": rec.index, "error": str(exc)})
    return results, failures, time.perf_counter() - t0


# experiments

def _kfold_rows(cfg: ExperimentConfig, records, variants: dict[str, ModelConfig]):
    samples = samples_of(split(records, "train"))
    rows = []
    for name, mcfg in variants.items():
        res = kfold_cv(samples, mcfg, cfg.train, cfg.folds)
        s = res.summary()
        rows.append({"model": name, "val_loss_mean": s["val_loss_mean"],
                     "val_loss_sd": s["val_loss_sd"], "time_mean": s["time_mean"],
                     "time_sd": s["time_sd"]})
        log.info("%s: %s", name, s)
    return rows


def _variants_table(cfg, records, params, result):
    variants = {v.value: replace(cfg.model, variant=v)
                for v in (Variant.GCN, Variant.GAT, Variant.GRAPHSAGE)}
    result.rows["variants"] = _kfold_rows(cfg, records, variants)


def _ablation(cfg, records, params, result):
    variants = {
        "no_encoder": replace(cfg.model, encoder=False),
        "nodewise_mlp": replace(cfg.model, message_passing=False),
        "original": cfg.model,
    }
    result.rows["ablation"] = _kfold_rows(cfg, records, variants)


def _missing(cfg, records, params, result):
    test = split(records, "test")
    for ratio in cfg.missing_ratios:
        samples = [masked_sample(r, ratio, cfg.seed) for r in test]
        result.stats[f"missing_{ratio:g}"] = evaluate(cfg.model, params, samples)


def _noise(cfg, records, params, result):
    test = split(records, "test")
    result.stats["clean"] = evaluate(cfg.model, params, samples_of(test))
    noisy = [noisy_sample(r, cfg.noise_level, cfg.seed, cfg.welch) for r in test]
    result.stats[f"noise_{cfg.noise_level:g}"] = evaluate(cfg.model, params, noisy)


def _train_size(cfg, records, params, result):
    train_recs = split(records, "train")
    test = samples_of(split(records, "test"))
    for size, bs in zip(cfg.train_sizes, cfg.batch_sizes):
        tcfg = replace(cfg.train, batch_size=bs)
        p, _ = train(samples_of(train_recs[:size]), cfg.model, tcfg)
        result.stats[f"train_{size}"] = evaluate(cfg.model, p, test)


def _fdd_compare(cfg, records, params, result):
    test = split(records, "test")
    # untimed warm-up so neither method pays first-call costs
    gnn_identify_histories(cfg.model, params, test[:1], cfg.welch)
    fdd_population(test[:1], cfg.welch)
    est, gnn_time = gnn_identify_histories(cfg.model, params, test, cfg.welch)
    result.stats["gnn"] = summarize(zip(est, [r.targets for r in test]))
    fdd, failures, fdd_time = fdd_population(test, cfg.welch)
    if fdd:
        result.stats["fdd"] = summarize((res.estimate, rec.targets) for rec, res in fdd)
    result.rows["timing"] = [
        {"method": "GNN", "structures": len(test), "seconds": gnn_time},
        {"method": "FDD", "structures": len(test), "seconds": fdd_time},
    ]
    result.info.update(gnn_seconds=gnn_time, fdd_seconds=fdd_time,
                       fdd_failures=failures,
                       speedup=fdd_time / gnn_time if gnn_time > 0 else float("inf"))


def _cross_population(cfg, records, params, result):
    result.stats["own_population"] = evaluate(cfg.model, params,
                                              samples_of(split(records, "test")))
    other = generate_dataset(cfg.cross_population, cfg.welch, cfg.model.k)
    result.stats["cross_population"] = evaluate(cfg.model, params, samples_of(other))


RUNNERS = {
    Experiment.VARIANTS_TABLE: _variants_table,
    Experiment.ABLATION: _ablation,
    Experiment.MISSING_FEATURES: _missing,
    Experiment.NOISE: _noise,
    Experiment.TRAIN_SIZE: _train_size,
    Experiment.FDD_COMPARE: _fdd_compare,
    Experiment.CROSS_POPULATION: _cross_population,
}
USES_MAIN_MODEL = {Experiment.MISSING_FEATURES, Experiment.NOISE, Experiment.FDD_COMPARE,
                   Experiment.CROSS_POPULATION}


def run_experiment(cfg: ExperimentConfig, records: list[DatasetRecord] | None = None,
                   params: ParamStore | None = None, out_dir=None) -> ExperimentResult:
    """Run one experiment end to end.

    ``records`` and ``params`` short-circuit dataset generation and training of
    the main model; when given they must come from the same configuration.
    """
    manifest = RunManifest(cfg.to_dict())
    result = ExperimentResult(cfg.experiment, manifest)
    try:
        if records is None:
            records = generate_dataset(cfg.population, cfg.welch, cfg.model.k,
                                       keep_history=cfg.experiment in NEEDS_HISTORY)
        if cfg.experiment in USES_MAIN_MODEL and params is None:
            params = train_main(cfg, records)
        RUNNERS[cfg.experiment](cfg, records, params, result)
    except OMAError as exc:
        exc.args = (f"{cfg.experiment.value}: {exc}",)
        raise
    if out_dir is not None:
        result.write(out_dir)
    return result
