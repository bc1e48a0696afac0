"""Automated Frequency Domain Decomposition with EFDD damping.

Per-bin SVD of the cross-PSD matrix, automatic peak picking on the first
singular value, shapes from the first singular vector and damping from the
autocorrelation of an isolated single-degree-of-freedom bell.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import (BellTooNarrow, ConfigError, InsufficientPeaks, NumericalFailure,
                     ShapeMismatch)
from .model import ModalEstimate
from .spectral import WelchConfig, cross_psd_matrix, hann
from .structural import TimeHistory


@dataclass
class SvdSpectrum:
    """Singular values per bin (descending) and the first singular vector."""

    singular_values: np.ndarray  # (M, N)
    u1: np.ndarray  # (M, N) complex, unit norm
    freq_axis: np.ndarray
    failed_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def sv1(self) -> np.ndarray:
        return self.singular_values[:, 0]

    @property
    def df(self) -> float:
        return float(self.freq_axis[1] - self.freq_axis[0])


@dataclass
class PeakPickConfig:
    k: int = 4
    min_separation: float | None = None  # Hz; None means 5 bins
    prominence_floor: float = 0.01
    search_band: tuple[float, float] | None = None
    shape_mac_max: float | None = 0.9
    select: str = "lowest"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.select not in ("lowest", "prominent"):
            raise ConfigError(f"unknown peak selection {self.select!r}")
        if self.min_separation is not None and self.min_separation <= 0:
            raise ConfigError("min_separation must be positive")

    def separation_bins(self, df: float) -> float:
        sep = 5 * df if self.min_separation is None else self.min_separation
        return sep / df


@dataclass
class EfddConfig:
    mac_floor: float = 0.8
    extrema: tuple[int, int] = (2, 10)
    pad: int = 8
    window_correction: bool = True


@dataclass
class FddResult:
    estimate: ModalEstimate
    peaks: np.ndarray
    wall_time: float
    damping_available: np.ndarray

    @property
    def k(self) -> int:
        return self.estimate.k


def svd_spectrum(G: np.ndarray, freq_axis: np.ndarray | None = None) -> SvdSpectrum:
    """SVD of every Hermitian PSD matrix ``G[f]``, computed by eigendecomposition."""
    G = np.asarray(G)
    if G.ndim != 3 or G.shape[1] != G.shape[2]:
        raise ShapeMismatch(f"expected (M, N, N) matrices, got {G.shape}")
    M, N, _ = G.shape
    freq_axis = np.arange(M, dtype=float) if freq_axis is None else np.asarray(freq_axis)
    try:
        w, v = np.linalg.eigh(G)
        failed = np.zeros(0, dtype=int)
    except np.linalg.LinAlgError:
        w = np.zeros((M, N))
        v = np.zeros((M, N, N), dtype=complex)
        bad = []
        for f in range(M):
            try:
                w[f], v[f] = np.linalg.eigh(G[f])
            except np.linalg.LinAlgError:
                bad.append(f)
        failed = np.array(bad, dtype=int)
        if len(failed) == M:
            raise NumericalFailure("eigendecomposition failed at every bin")
    sv = np.clip(w[:, ::-1], 0.0, None)
    u1 = v[:, :, -1]
    return SvdSpectrum(sv, u1, freq_axis, failed)


def pick_peaks(sv1: np.ndarray, cfg: PeakPickConfig = PeakPickConfig(),
               freq_axis: np.ndarray | None = None,
               u1: np.ndarray | None = None) -> np.ndarray:
    """Automatic peak picking on the first singular value curve.

    Local maxima with prominence of at least ``prominence_floor`` times the
    curve maximum are visited from most to least prominent. A candidate is
    dropped when it lies closer than the minimum separation to an accepted
    peak or, if ``u1`` is given, when its singular vector has a MAC of at least
    ``shape_mac_max`` with one (estimation ripple on the flank of a stronger
    mode). Of the accepted peaks the ``k`` lowest in frequency are returned, or
    the ``k`` most prominent with ``select="prominent"``; output is ascending.
    """
    sv1 = np.asarray(sv1, float)
    if not np.all(np.isfinite(sv1)):
        raise ConfigError("singular value curve must be finite")
    freq_axis = np.arange(len(sv1), dtype=float) if freq_axis is None else freq_axis
    df = float(freq_axis[1] - freq_axis[0]) if len(freq_axis) > 1 else 1.0
    floor = cfg.prominence_floor * float(sv1.max(initial=0.0))
    idx, props = find_peaks(sv1, prominence=floor if floor > 0 else (None, None))
    prom = props["prominences"]
    if cfg.search_band is not None:
        lo, hi = cfg.search_band
        keep = (freq_axis[idx] >= lo) & (freq_axis[idx] <= hi)
        idx, prom = idx[keep], prom[keep]
    sep = cfg.separation_bins(df)
    check_shape = u1 is not None and cfg.shape_mac_max is not None
    chosen: list[int] = []
    for i in idx[np.argsort(-prom, kind="stable")]:
        if any(abs(i - j) < sep for j in chosen):
            continue
        if check_shape and chosen and np.max(
                _complex_mac(u1[chosen], u1[i])) >= cfg.shape_mac_max:
            continue
        chosen.append(int(i))
        if cfg.select == "prominent" and len(chosen) == cfg.k:
            break
    if len(chosen) < cfg.k:
        raise InsufficientPeaks(len(chosen), cfg.k)
    if cfg.select == "lowest":
        return np.sort(chosen)[: cfg.k]
    return np.sort(chosen)


def fdd_mode_shapes(svd: SvdSpectrum, peaks) -> np.ndarray:
    """|u_1| at each peak bin, every column scaled to a maximum of 1."""
    shapes = np.abs(svd.u1[np.asarray(peaks)]).T  # (N, k)
    return shapes / shapes.max(axis=0, keepdims=True)


def _complex_mac(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    num = np.abs(u.conj() @ v) ** 2
    return num / (np.sum(np.abs(u) ** 2, axis=-1) * np.vdot(v, v).real)


def sdof_bell(svd: SvdSpectrum, peak: int, mac_floor: float = 0.8) -> np.ndarray:
    """Contiguous bins around ``peak`` whose u_1 matches the peak vector."""
    mac = _complex_mac(svd.u1, svd.u1[peak])
    lo = peak
    while lo > 0 and mac[lo - 1] >= mac_floor:
        lo -= 1
    hi = peak
    while hi < len(mac) - 1 and mac[hi + 1] >= mac_floor:
        hi += 1
    return np.arange(lo, hi + 1)


def _window_lag_weights(segment: int, lags: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation of the Hann window at fractional lags (samples)."""
    w = hann(segment)
    full = np.correlate(w, w, mode="full")[segment - 1:]
    full = full / full[0]
    return np.interp(lags, np.arange(segment), full, right=0.0)


def _zero_crossings(r: np.ndarray) -> np.ndarray:
    """Fractional sample positions where ``r`` changes sign."""
    i = np.flatnonzero(np.sign(r[:-1]) * np.sign(r[1:]) < 0)
    return i + r[i] / (r[i] - r[i + 1])


def _half_cycle_extrema(r: np.ndarray, crossings: np.ndarray) -> np.ndarray:
    """Largest |r| within each half cycle; immune to ripple between crossings."""
    edges = np.concatenate([[0], np.ceil(crossings).astype(int), [len(r)]])
    return np.array([np.abs(r[a:b]).max() if b > a else 0.0
                     for a, b in zip(edges[:-1], edges[1:])])


def efdd_damping(svd: SvdSpectrum, peak: int, cfg: EfddConfig = EfddConfig()
                 ) -> tuple[float, float]:
    """Damping ratio and enhanced frequency from the SDOF bell at ``peak``.

    The bell's first singular values, zero elsewhere, are transformed back to a
    normalized autocorrelation. A straight line through the log magnitudes of
    half-cycle extrema ``cfg.extrema`` gives the logarithmic decrement; the zero
    crossings over the same span give the damped period.
    """
    bell = sdof_bell(svd, peak, cfg.mac_floor)
    if len(bell) < 3:
        raise BellTooNarrow(f"bell at bin {peak} spans {len(bell)} bins")
    spec = np.zeros(len(svd.sv1))
    spec[bell] = svd.sv1[bell]
    n = cfg.pad * 2 * (len(spec) - 1)
    r = np.fft.irfft(spec, n=n)[: n // 2]
    r = r / r[0]
    dt = 1.0 / (n * svd.df)
    if cfg.window_correction:
        # Welch averaging multiplies the autocorrelation by the window's own one
        segment = 2 * (len(spec) - 1)
        wl = _window_lag_weights(segment, np.arange(len(r)) / cfg.pad)
        r = np.where(wl > 0.05, r / np.maximum(wl, 0.05), 0.0)
    a, b = cfg.extrema
    cross = _zero_crossings(r)
    if len(cross) < b + 1:
        raise BellTooNarrow(f"autocorrelation at bin {peak} has {len(cross)} zero crossings")
    amp = _half_cycle_extrema(r, cross)[a:b + 1]
    if np.any(amp <= 0):
        raise BellTooNarrow(f"autocorrelation at bin {peak} has vanishing extrema")
    slope = np.polyfit(np.arange(a, b + 1), np.log(amp), 1)[0]
    delta = -2.0 * slope  # consecutive extrema are half a period apart
    zeta = delta / np.sqrt(4 * np.pi ** 2 + delta ** 2)
    t = cross[a - 1:b + 1] * dt if a >= 1 else cross[:b + 1] * dt
    half_period = np.polyfit(np.arange(len(t)), t, 1)[0]
    f = 1.0 / (2.0 * half_period * np.sqrt(1.0 - zeta ** 2))
    return float(zeta), float(f)


def fdd_identify(history: TimeHistory, welch_cfg: WelchConfig = WelchConfig(),
                 pick_cfg: PeakPickConfig = PeakPickConfig(),
                 efdd_cfg: EfddConfig = EfddConfig(), discard: float = 5.0) -> FddResult:
    """Full FDD/EFDD identification of one structure from its time histories.

    Frequencies are the EFDD sub-bin estimates where a bell could be isolated
    and the peak bin centres otherwise; damping is NaN in the latter case.
    """
    if history.n_channels < 2:
        raise ShapeMismatch("FDD needs at least two channels")
    t0 = time.perf_counter()
    h = history.discard(discard) if discard > 0 else history
    G = cross_psd_matrix(h.accelerations, welch_cfg)
    svd = svd_spectrum(G, welch_cfg.freq_axis())
    peaks = pick_peaks(svd.sv1, pick_cfg, svd.freq_axis, svd.u1)
    shapes = fdd_mode_shapes(svd, peaks)
    freqs = svd.freq_axis[peaks].astype(float)
    zetas = np.full(len(peaks), np.nan)
    ok = np.zeros(len(peaks), dtype=bool)
    for j, p in enumerate(peaks):
        try:
            zetas[j], f_hat = efdd_damping(svd, int(p), efdd_cfg)
            ok[j] = True
        except BellTooNarrow:
            continue
        bell = svd.freq_axis[sdof_bell(svd, int(p), efdd_cfg.mac_floor)]
        # the sub-bin estimate replaces the bin centre only if it stays in the bell
        if bell[0] <= f_hat <= bell[-1]:
            freqs[j] = f_hat
    wall = time.perf_counter() - t0
    return FddResult(ModalEstimate(freqs, zetas, shapes), peaks, wall, ok)
