"""MAC, relative errors and per-mode summary statistics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import Empty, ShapeMismatch, ZeroTarget, ZeroVector


def mac(a, b) -> float:
    """Modal assurance criterion of two real shape vectors."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape vectors differ in length: {a.size} vs {b.size}")
    aa, bb = a @ a, b @ b
    if aa == 0 or bb == 0:
        raise ZeroVector("MAC is undefined for an all-zero vector")
    return float(min(1.0, (a @ b) ** 2 / (aa * bb)))


def relative_error(est, target):
    """Signed error in percent, ``(est / target - 1) * 100``; elementwise."""
    target = np.asarray(target, float)
    if np.any(target == 0):
        raise ZeroTarget("relative error against a zero target")
    out = (np.asarray(est, float) / target - 1.0) * 100.0
    return float(out) if out.ndim == 0 else out


@dataclass
class ModeStats:
    mode: int
    mac_mean: float
    mac_sd: float
    mac_min: float
    z_mean: float
    z_sd: float
    z_max: float
    f_mean: float
    f_sd: float
    f_max: float
    z_abs_mean: float
    f_abs_mean: float
    n: int
    z_count: int


COLUMNS = ("mode", "mac_mean", "mac_sd", "mac_min", "z_mean", "z_sd", "z_max",
           "f_mean", "f_sd", "f_max")


def _sd(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


@dataclass
class PerModeStats:
    """Population statistics per mode.

    Error means and SDs are of the signed percentage errors; ``*_max`` is the
    largest error magnitude. Damping entries that are NaN (no estimate) are
    left out and counted in ``z_count``.
    """

    modes: list[ModeStats]
    macs: np.ndarray  # (n, k)
    z_errors: np.ndarray
    f_errors: np.ndarray

    @property
    def k(self) -> int:
        return len(self.modes)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.modes])

    def rows(self) -> list[list]:
        return [[f"Mode {m.mode}"] + [getattr(m, c) for c in COLUMNS[1:]] for m in self.modes]

    def to_csv(self, extra: dict | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if extra:
            for k, v in extra.items():
                w.writerow([f"# {k}", v])
        w.writerow(COLUMNS)
        for m in self.modes:
            w.writerow([m.mode] + [f"{getattr(m, c):.6g}" for c in COLUMNS[1:]])
        return buf.getvalue()

    def to_markdown(self, title: str = "") -> str:
        head = ("| | MAC mean | MAC SD | MAC min | Z err mean | Z err SD | Z err max "
                "| F err mean | F err SD | F err max |")
        lines = [f"**{title}**", ""] if title else []
        lines += [head, "|" + "---|" * 10]
        for m in self.modes:
            lines.append(f"| Mode {m.mode} | {m.mac_mean:.3f} | {m.mac_sd:.3f} | {m.mac_min:.3f} "
                         f"| {m.z_mean:.3f} | {m.z_sd:.3f} | {m.z_max:.3f} "
                         f"| {m.f_mean:.3f} | {m.f_sd:.3f} | {m.f_max:.3f} |")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"modes": [vars(m) for m in self.modes]}


def summarize(results) -> PerModeStats:
    """Per-mode MAC and error statistics over ``(estimate, target)`` pairs.

    Modes are paired by index. Sample (n - 1) standard deviations.
    """
    results = list(results)
    if not results:
        raise Empty("no results to summarize")
    k = results[0][1].k
    macs, zs, fs = [], [], []
    for est, tgt in results:
        if est.k != k or tgt.k != k:
            raise ShapeMismatch("inconsistent mode count across results")
        macs.append([mac(est.mode_shapes[:, j], tgt.mode_shapes[:, j]) for j in range(k)])
        zs.append(relative_error(est.damping_ratios, tgt.damping_ratios))
        fs.append(relative_error(est.frequencies, tgt.frequencies))
    M, Z, F = np.array(macs), np.array(zs, float), np.array(fs, float)
    modes = []
    for j in range(k):
        z = Z[:, j][np.isfinite(Z[:, j])]
        f = F[:, j]
        zstats = (float(z.mean()), _sd(z), float(np.abs(z).max()), float(np.abs(z).mean())) \
            if len(z) else (np.nan,) * 4
        modes.append(ModeStats(
            mode=j + 1, mac_mean=float(M[:, j].mean()), mac_sd=_sd(M[:, j]),
            mac_min=float(M[:, j].min()), z_mean=zstats[0], z_sd=zstats[1], z_max=zstats[2],
            f_mean=float(f.mean()), f_sd=_sd(f), f_max=float(np.abs(f).max()),
            z_abs_mean=zstats[3], f_abs_mean=float(np.abs(f).mean()), n=len(results),
            z_count=len(z)))
    return PerModeStats(modes, M, Z, F)
