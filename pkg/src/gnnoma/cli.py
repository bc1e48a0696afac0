"""Command line: generate | train | identify | fdd | experiment | report.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 acceptance
threshold missed under ``--check``.
"""
from __future__ import annotations

import os


def _cap_threads():
    # must run before numpy is imported anywhere
    n = os.environ.get("OMA_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import asdict, replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, write_loss_csv  # noqa: E402
from .dataset import generate_dataset, load_dataset, save_dataset, split  # noqa: E402
from .errors import ConfigError, OMAError  # noqa: E402
from .experiments import (Experiment, ExperimentConfig, fdd_population,  # noqa: E402
                          masked_sample, run_experiment)
from .model import ModelConfig, Variant, predict  # noqa: E402
from .population import PopulationConfig  # noqa: E402
from .spectral import WelchConfig  # noqa: E402
from .training import TrainConfig, train  # noqa: E402

log = logging.getLogger("gnnoma")

EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _select(records, which: str):
    return records if which == "all" else split(records, which)


def _estimates_json(records, estimates, extra=None) -> list[dict]:
    out = []
    for i, (rec, est) in enumerate(zip(records, estimates)):
        row = {"index": rec.index, "frequencies": est.frequencies.tolist(),
               "damping_ratios": est.damping_ratios.tolist(),
               "mode_shapes": est.mode_shapes.tolist()}
        if extra:
            row.update(extra[i])
        out.append(row)
    return out


def _write_estimates(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        k = len(rows[0]["frequencies"]) if rows else 0
        head = ["index"] + [f"f{j + 1}" for j in range(k)] + [f"z{j + 1}" for j in range(k)]
        lines = [",".join(head)]
        for r in rows:
            vals = r["frequencies"] + r["damping_ratios"]
            lines.append(",".join([str(r["index"])] + [repr(float(v)) for v in vals]))
        path.write_text("\n".join(lines) + "\n")
    else:
        path.write_text(json.dumps(rows, indent=2))


# commands

def cmd_generate(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    welch = WelchConfig(**cfg.pop("welch", {}))
    k = int(cfg.pop("k", 4))
    keep = bool(cfg.pop("keep_history", False)) or args.keep_history
    if args.paper_scale:
        cfg.setdefault("count", 500)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.count is not None:
        cfg["count"] = args.count
    pop = PopulationConfig.from_dict(cfg)
    workers = 1 if args.deterministic else None
    records = generate_dataset(pop, welch, k, keep_history=keep, workers=workers)
    echo = {"population": pop.to_dict(), "welch": asdict(welch), "k": k,
            "keep_history": keep}
    save_dataset(records, args.out, echo, pop.seed)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    records, manifest = load_dataset(args.data)
    samples = [r.sample() for r in split(records, "train")]
    val = [r.sample() for r in split(records, "test")] if args.validate else None
    epochs = args.epochs if args.epochs is not None else (5000 if args.paper_scale else 1000)
    if args.patience and not args.validate:
        raise ConfigError("--patience needs --validate")
    tcfg = TrainConfig(epochs=epochs, batch_size=args.batch_size, seed=args.seed, lr=args.lr,
                       patience=args.patience)
    mcfg = ModelConfig(psd_dim=samples[0].features.shape[1], variant=Variant(args.variant),
                       k=samples[0].targets.k)
    params, hist = train(samples, mcfg, tcfg, validation=val,
                         progress_every=args.progress)
    meta = {"seed": args.seed, "epochs": epochs, "train": tcfg.to_dict(),
            "data": str(args.data), "data_seed": manifest.get("seed")}
    out = save_checkpoint(args.out, Checkpoint(mcfg, params, meta, hist))
    write_loss_csv(out / "loss_history.csv", hist)
    print(f"trained {epochs} epochs; checkpoint in {out}")
    return 0


def cmd_identify(args) -> int:
    records, _ = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    chosen = _select(records, args.split)
    samples = [masked_sample(r, args.missing_ratio, args.seed) for r in chosen]
    est = predict(ckpt.model_cfg, ckpt.params, samples)
    _write_estimates(args.out, _estimates_json(chosen, est))
    print(f"identified {len(est)} structures -> {args.out}")
    return 0


def cmd_fdd(args) -> int:
    records, manifest = load_dataset(args.data)
    chosen = _select(records, args.split)
    if any(r.history is None for r in chosen):
        raise ConfigError("FDD needs time histories; generate with --keep-history")
    welch = WelchConfig(**manifest.get("config", {}).get("welch", {}))
    results, failures, seconds = fdd_population(chosen, welch)
    rows = _estimates_json([rec for rec, _ in results], [res.estimate for _, res in results],
                           [{"wall_time": res.wall_time, "peaks": res.peaks.tolist()}
                            for _, res in results])
    _write_estimates(args.out, rows)
    for f in failures:
        print(f"structure {f['index']}: {f['error']}", file=sys.stderr)
    print(f"FDD on {len(chosen)} structures in {seconds:.3f} s "
          f"({len(failures)} failed) -> {args.out}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        d = _read_json(args.config)
        d["experiment"] = args.name
        cfg = ExperimentConfig.from_dict(d)
    elif args.paper_scale:
        cfg = ExperimentConfig.paper_scale(args.name, seed=args.seed)
    else:
        cfg = ExperimentConfig.desk(args.name, seed=args.seed)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if args.count is not None:
        cfg = ExperimentConfig.from_dict(
            cfg.to_dict() | {"population": cfg.population.to_dict() | {"count": args.count},
                             "cross_population": None, "train_sizes": None})
    return cfg


def check_result(result) -> list[str]:
    """Threshold checks for ``--check``; returns the failed conditions."""
    exp, st, rows, info = result.experiment, result.stats, result.rows, result.info
    bad = []
    if exp is Experiment.VARIANTS_TABLE:
        r = {x["model"]: x for x in rows["variants"]}
        g = r["GraphSAGE"]
        if not (g["val_loss_mean"] <= r["GCN"]["val_loss_mean"]
                and g["val_loss_mean"] <= r["GAT"]["val_loss_mean"]):
            bad.append("GraphSAGE validation loss is not the lowest")
        if g["time_mean"] > r["GAT"]["time_mean"]:
            bad.append("GraphSAGE trains slower than GAT")
    elif exp is Experiment.ABLATION:
        r = {x["model"]: x["val_loss_mean"] for x in rows["ablation"]}
        if r["original"] > min(r["no_encoder"], r["nodewise_mlp"]):
            bad.append("an ablated model beats the original")
    elif exp is Experiment.MISSING_FEATURES:
        macs = [s.modes[0].mac_mean for s in st.values()]
        if any(b >= a for a, b in zip(macs, macs[1:])):
            bad.append("mode-1 MAC does not decrease with the missing ratio")
        if macs[-1] < 0.9:
            bad.append("mode-1 MAC below 0.9 at the largest missing ratio")
        f_abs = np.array([np.abs(s.column("f_mean")) for s in st.values()])
        if np.any(f_abs.max(axis=0) - f_abs.min(axis=0) >= 5):
            bad.append("a mode's frequency error moves by 5 points or more across ratios")
    elif exp is Experiment.NOISE:
        clean, noisy = list(st.values())
        if abs(noisy.modes[0].mac_mean - clean.modes[0].mac_mean) >= 0.05:
            bad.append("noise moves mode-1 MAC by 0.05 or more")
        if np.any(np.abs(noisy.column("f_mean")) - np.abs(clean.column("f_mean")) < 3):
            bad.append("noise raises a mode's frequency error by less than 3 points")
    elif exp is Experiment.FDD_COMPARE:
        if info["speedup"] < 10:
            bad.append(f"GNN only {info['speedup']:.1f}x faster than FDD")
    elif exp is Experiment.CROSS_POPULATION:
        own, cross = st["own_population"], st["cross_population"]
        if cross.modes[1].mac_mean < 0.7:
            bad.append("cross-population mode-2 MAC below 0.7")
        if not cross.modes[0].mac_mean < own.modes[0].mac_mean:
            bad.append("cross-population mode-1 MAC is not worse")
    return bad


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    records = params = None
    if args.data:
        records, _ = load_dataset(args.data)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        cfg.model = ckpt.model_cfg
        params = ckpt.params
    out = Path(args.out or f"results/{cfg.experiment.value}")
    result = run_experiment(cfg, records, params, out)
    print(result.markdown())
    print(f"results in {out} (run {result.manifest.hash[:12]})")
    if args.check:
        failed = check_result(result)
        for msg in failed:
            print(f"CHECK FAILED: {msg}", file=sys.stderr)
        if failed:
            return EXIT_CHECK
    return 0


def cmd_report(args) -> int:
    parts, csv_rows = ["# Results", ""], []
    for d in args.inputs:
        res = _read_json(Path(d) / "result.json")
        run = res["manifest"]["hash"]
        parts.append((Path(d) / "results.md").read_text()
                     if (Path(d) / "results.md").exists() else f"# {res['experiment']}")
        for name, st in res["stats"].items():
            for m in st["modes"]:
                csv_rows.append([res["experiment"], name, run] +
                                [m[c] for c in ("mode", "mac_mean", "mac_sd", "mac_min",
                                                "z_mean", "z_sd", "z_max", "f_mean", "f_sd",
                                                "f_max")])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text("\n".join(parts) + "\n")
    head = "experiment,table,run,mode,mac_mean,mac_sd,mac_min,z_mean,z_sd,z_max,f_mean,f_sd,f_max"
    (out / "report.csv").write_text(
        head + "\n" + "\n".join(",".join(str(v) for v in r) for r in csv_rows) + "\n")
    print(f"merged {len(args.inputs)} result sets into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gnnoma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--deterministic", action="store_true",
                   help="single worker everywhere")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="build and save a simulated population")
    g.add_argument("--config", help="JSON population config (optional welch, k)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--keep-history", action="store_true")
    g.add_argument("--paper-scale", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset's train split")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--variant", default="GraphSAGE", choices=[v.value for v in Variant])
    t.add_argument("--validate", action="store_true", help="track loss on the test split")
    t.add_argument("--patience", type=int, default=0,
                   help="with --validate, stop after N epochs without improvement")
    t.add_argument("--progress", type=int, default=0, help="log every N epochs")
    t.add_argument("--paper-scale", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("identify", help="modal estimates from a checkpoint")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True, help=".json or .csv")
    i.add_argument("--split", default="test", choices=["train", "test", "all"])
    i.add_argument("--missing-ratio", type=float, default=0.0)
    i.add_argument("--seed", type=int, default=0)
    i.set_defaults(func=cmd_identify)

    f = sub.add_parser("fdd", help="FDD/EFDD baseline on stored time histories")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--split", default="test", choices=["train", "test", "all"])
    f.set_defaults(func=cmd_fdd)

    e = sub.add_parser("experiment", help="run a named experiment")
    e.add_argument("name", choices=[x.value for x in Experiment])
    e.add_argument("--config", help="JSON experiment config")
    e.add_argument("--data", help="reuse a saved dataset")
    e.add_argument("--checkpoint", help="reuse a trained main model")
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--epochs", type=int)
    e.add_argument("--count", type=int)
    e.add_argument("--paper-scale", action="store_true")
    e.add_argument("--check", action="store_true", help="exit 3 if thresholds are missed")
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="merge experiment outputs")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        os.environ["OMA_THREADS"] = "1"
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OMAError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
