"""Dataset records, generation and on-disk persistence.

Layout of a dataset directory::

    manifest.json           schema version, config echo, seed, counts, file list
    record_00000.bin        one file per structure

Each record file is a little-endian stream::

    u64 header length | JSON header (UTF-8)
    i64 N | i64 M | N*M f64 PSD matrix, row-major
    [i64 N | i64 P | N*P f64 accelerations]    only if header["has_history"]
"""
from __future__ import annotations

import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptPayload, SchemaMismatch
from .model import GraphSample
from .population import (BoundarySpec, PopulationConfig, TrussStructure,
                         generate_population)
from .spectral import PsdSet, WelchConfig, normalize_psd_set, psd_from_history
from .structural import ModalSolution, TimeHistory, modal_targets, simulate_truss

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
DISCARD_SECONDS = 5.0
_U64 = struct.Struct("<Q")
_DIMS = struct.Struct("<qq")


@dataclass
class DatasetRecord:
    structure: TrussStructure
    targets: ModalSolution
    psd: PsdSet
    split: str = "train"
    history: TimeHistory | None = None
    index: int = 0

    def sample(self) -> GraphSample:
        return GraphSample(self.psd.values, self.structure.edges, self.targets)


def worker_count(requested: int | None = None) -> int:
    """Worker cap from ``OMA_THREADS`` (default 1)."""
    cap = int(os.environ.get("OMA_THREADS", "1") or 1)
    return max(1, min(cap, requested or cap))


def simulation_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, 1])


def build_record(truss: TrussStructure, index: int, seed: int,
                 welch: WelchConfig = WelchConfig(), k: int = 4,
                 keep_history: bool = False, duration: float | None = None
                 ) -> DatasetRecord:
    """Simulate one structure and compute its normalized PSDs and targets."""
    kw = {} if duration is None else {"duration": duration}
    hist = simulate_truss(truss, simulation_rng(seed, index), **kw)
    psd = normalize_psd_set(psd_from_history(hist, welch, DISCARD_SECONDS))
    return DatasetRecord(truss, modal_targets(truss, k), psd, truss.split,
                         hist if keep_history else None, index)


def _build(args):
    return build_record(*args)


def generate_dataset(config: PopulationConfig, welch: WelchConfig = WelchConfig(),
                     k: int = 4, keep_history: bool = False,
                     workers: int | None = None) -> list[DatasetRecord]:
    """Generate, simulate and label a whole population.

    Records depend only on ``(config.seed, index)``, so the result is identical
    for any worker count.
    """
    structures = generate_population(config)
    jobs = [(s, i, config.seed, welch, k, keep_history) for i, s in enumerate(structures)]
    n = worker_count(workers)
    if n == 1:
        return [_build(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_build, jobs, chunksize=max(1, len(jobs) // (4 * n))))


def split(records: list[DatasetRecord], tag: str) -> list[DatasetRecord]:
    return [r for r in records if r.split == tag]


# persistence

def _header(rec: DatasetRecord) -> dict:
    s = rec.structure
    b = s.boundary
    return {
        "index": rec.index,
        "split": rec.split,
        "nodes": s.nodes.tolist(),
        "edges": s.edges.tolist(),
        "youngs_modulus": s.youngs_modulus.tolist(),
        "area": s.area.tolist(),
        "density": s.density.tolist(),
        "supports": s.supports.astype(int).tolist(),
        "excited_nodes": s.excited_nodes.tolist(),
        "boundary": None if b is None else {
            "bottom_span": b.bottom_span, "height": b.height, "top_span": b.top_span,
            "kind": b.kind.value},
        "zeta_anchors": list(s.zeta_anchors),
        "targets": {
            "frequencies": rec.targets.frequencies.tolist(),
            "damping_ratios": rec.targets.damping_ratios.tolist(),
            "mode_shapes": rec.targets.mode_shapes.tolist(),
        },
        "psd": {
            "freq_axis": rec.psd.freq_axis.tolist(),
            "known_mask": np.asarray(rec.psd.known_mask, bool).astype(int).tolist(),
            "normalized": bool(rec.psd.normalized),
        },
        "has_history": rec.history is not None,
        "dt": None if rec.history is None else rec.history.dt,
    }


def _matrix_bytes(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return _DIMS.pack(*a.shape) + a.tobytes(order="C")


def write_record(path: Path, rec: DatasetRecord):
    head = json.dumps(_header(rec)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_U64.pack(len(head)))
        fh.write(head)
        fh.write(_matrix_bytes(rec.psd.values))
        if rec.history is not None:
            fh.write(_matrix_bytes(rec.history.accelerations))


def _read_matrix(buf: memoryview, pos: int, name: str) -> tuple[np.ndarray, int]:
    if len(buf) < pos + _DIMS.size:
        raise CorruptPayload(f"{name}: truncated before matrix dimensions")
    n, m = _DIMS.unpack_from(buf, pos)
    pos += _DIMS.size
    if n < 0 or m < 0:
        raise CorruptPayload(f"{name}: negative matrix dimensions")
    nbytes = 8 * n * m
    if len(buf) < pos + nbytes:
        raise CorruptPayload(f"{name}: payload has {len(buf) - pos} bytes, expected {nbytes}")
    a = np.frombuffer(buf, dtype="<f8", count=n * m, offset=pos).reshape(n, m)
    return a.astype(np.float64), pos + nbytes


def read_record(path: Path) -> DatasetRecord:
    name = Path(path).name
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < _U64.size:
        raise CorruptPayload(f"{name}: missing header length")
    (hlen,) = _U64.unpack_from(buf, 0)
    if len(buf) < _U64.size + hlen:
        raise CorruptPayload(f"{name}: truncated header")
    try:
        h = json.loads(bytes(buf[_U64.size:_U64.size + hlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"{name}: unreadable header") from exc
    pos = _U64.size + hlen
    psd_vals, pos = _read_matrix(buf, pos, name)
    hist = None
    if h["has_history"]:
        acc, pos = _read_matrix(buf, pos, name)
        hist = TimeHistory(acc, h["dt"])
    if pos != len(buf):
        raise CorruptPayload(f"{name}: {len(buf) - pos} trailing bytes")
    b = h["boundary"]
    structure = TrussStructure(
        nodes=np.array(h["nodes"], float).reshape(-1, 2),
        edges=np.array(h["edges"], int).reshape(-1, 2),
        youngs_modulus=np.array(h["youngs_modulus"], float),
        area=np.array(h["area"], float),
        density=np.array(h["density"], float),
        supports=np.array(h["supports"], bool).reshape(-1, 2),
        excited_nodes=np.array(h["excited_nodes"], int),
        boundary=None if b is None else BoundarySpec(**b),
        zeta_anchors=tuple(h["zeta_anchors"]),
        split=h["split"],
    )
    t = h["targets"]
    k = len(t["frequencies"])
    targets = ModalSolution(np.array(t["frequencies"], float),
                            np.array(t["damping_ratios"], float),
                            np.array(t["mode_shapes"], float).reshape(-1, k))
    p = h["psd"]
    psd = PsdSet(psd_vals, np.array(p["freq_axis"], float),
                 np.array(p["known_mask"], bool), p["normalized"])
    rec = DatasetRecord(structure, targets, psd, h["split"], hist, h["index"])
    _check_record(rec, name)
    return rec


def _check_record(rec: DatasetRecord, name: str):
    n = rec.structure.n_nodes
    if rec.psd.values.shape[0] != n:
        raise CorruptPayload(f"{name}: PSD has {rec.psd.values.shape[0]} rows for {n} nodes")
    if rec.psd.values.shape[1] != len(rec.psd.freq_axis):
        raise CorruptPayload(f"{name}: PSD width does not match its frequency axis")
    if rec.targets.mode_shapes.shape[0] != n:
        raise CorruptPayload(f"{name}: target shapes do not match node count")
    if rec.history is not None and rec.history.n_channels != n:
        raise CorruptPayload(f"{name}: history channels do not match node count")


def record_name(index: int) -> str:
    return f"record_{index:05d}.bin"


def save_dataset(records: list[DatasetRecord], path, config: dict | None = None,
                 seed: int | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for rec in records:
        fname = record_name(rec.index)
        write_record(path / fname, rec)
        files.append(fname)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": config or {},
        "seed": seed,
        "counts": {"total": len(records), "train": len(split(records, "train")),
                   "test": len(split(records, "test"))},
        "k": records[0].targets.k if records else None,
        "records": files,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.exists():
        raise ConfigError(f"no {MANIFEST} in {path}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"dataset schema {manifest.get('schema_version')!r}, "
                             f"expected {SCHEMA_VERSION}")
    return manifest


def load_dataset(path) -> tuple[list[DatasetRecord], dict]:
    path = Path(path)
    manifest = load_manifest(path)
    records = [read_record(path / f) for f in manifest["records"]]
    if len(records) != manifest["counts"]["total"]:
        raise SchemaMismatch("manifest record count disagrees with files")
    return records, manifest
