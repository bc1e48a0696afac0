"""Spectral estimation: FFT wrapper, Welch auto/cross PSDs, noise, normalization."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AllZero, BadLength, ConfigError, TooShort
from .structural import TimeHistory


@dataclass(frozen=True)
class WelchConfig:
    segment_length: int = 1024
    overlap: float = 0.5
    window: str = "hann"
    sample_rate: float = 200.0

    def __post_init__(self):
        if not _is_pow2(self.segment_length):
            raise BadLength(f"segment_length {self.segment_length} is not a power of two")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must lie in [0, 1)")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.segment_length // 2 + 1

    @property
    def df(self) -> float:
        return self.sample_rate / self.segment_length

    @property
    def hop(self) -> int:
        return max(1, int(round(self.segment_length * (1.0 - self.overlap))))

    def freq_axis(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.df


@dataclass
class PsdSet:
    values: np.ndarray  # (N, M)
    freq_axis: np.ndarray
    known_mask: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        if self.known_mask is None:
            self.known_mask = np.ones(self.values.shape[0], dtype=bool)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fft(signal, n: int | None = None) -> np.ndarray:
    """DFT along the last axis, zero-padded to the power-of-two length ``n``."""
    signal = np.asarray(signal)
    n = signal.shape[-1] if n is None else n
    if not _is_pow2(n):
        raise BadLength(f"fft length {n} is not a power of two")
    if signal.shape[-1] > n:
        raise BadLength(f"signal length {signal.shape[-1]} exceeds n={n}")
    return np.fft.fft(signal, n=n, axis=-1)


def rfft(signal, n: int | None = None) -> np.ndarray:
    """Non-negative-frequency half of :func:`fft` for real input."""
    signal = np.asarray(signal, float)
    n = signal.shape[-1] if n is None else n
    if not _is_pow2(n):
        raise BadLength(f"rfft length {n} is not a power of two")
    if signal.shape[-1] > n:
        raise BadLength(f"signal length {signal.shape[-1]} exceeds n={n}")
    return np.fft.rfft(signal, n=n, axis=-1)


def ifft(spectrum, n: int | None = None) -> np.ndarray:
    spectrum = np.asarray(spectrum)
    n = spectrum.shape[-1] if n is None else n
    if not _is_pow2(n):
        raise BadLength(f"ifft length {n} is not a power of two")
    return np.fft.ifft(spectrum, n=n, axis=-1)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _segment_spectra(channels: np.ndarray, cfg: WelchConfig) -> tuple[np.ndarray, float]:
    """Windowed one-sided segment spectra, shape (N, S, M), and the density scale."""
    L = cfg.segment_length
    P = channels.shape[-1]
    if P < L:
        raise TooShort(f"{P} samples < segment length {L}")
    w = hann(L)
    segs = sliding_window_view(channels, L, axis=-1)[:, ::cfg.hop] * w  # (N, S, L)
    spec = rfft(segs, L)
    scale = 1.0 / (cfg.sample_rate * np.sum(w * w))
    return spec, scale


def _one_sided(P: np.ndarray, cfg: WelchConfig) -> np.ndarray:
    # segment length is a power of two, so the last bin is Nyquist
    P[..., 1:-1] *= 2.0
    return P


def welch_psd(channel, cfg: WelchConfig = WelchConfig()) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Welch auto-PSD of a single channel (density, units^2/Hz)."""
    x = np.asarray(channel, float)[None, :]
    spec, scale = _segment_spectra(x, cfg)
    psd = np.mean(np.abs(spec) ** 2, axis=1)[0] * scale
    return _one_sided(psd, cfg), cfg.freq_axis()


def welch_psd_matrix(channels, cfg: WelchConfig = WelchConfig()) -> np.ndarray:
    """Auto-PSDs of every row of ``channels``; (N, M)."""
    x = np.asarray(channels, float)
    spec, scale = _segment_spectra(x, cfg)
    psd = np.mean(spec.real ** 2 + spec.imag ** 2, axis=1) * scale
    return _one_sided(psd, cfg)


def cross_psd_matrix(channels, cfg: WelchConfig = WelchConfig()) -> np.ndarray:
    """Per-bin Hermitian cross-PSD matrices, shape (M, N, N).

    ``G[f, i, j]`` is the cross spectrum of channel ``i`` with ``j``.
    """
    x = np.asarray(channels, float)
    spec, scale = _segment_spectra(x, cfg)  # (N, S, M)
    S = spec.shape[1]
    G = np.einsum("isf,jsf->fij", spec, spec.conj(), optimize=True) * (scale / S)
    G = _one_sided(np.moveaxis(G, 0, -1), cfg)
    G = np.ascontiguousarray(np.moveaxis(G, -1, 0))
    # force exact Hermitian symmetry and a real diagonal
    G = 0.5 * (G + np.conj(np.swapaxes(G, 1, 2)))
    return G


def inject_noise(history: TimeHistory, level: float = 0.10,
                 rng: np.random.Generator | None = None) -> TimeHistory:
    """Add white Gaussian noise whose RMS is ``level`` times each channel's RMS."""
    if level < 0:
        raise ConfigError("noise level must be >= 0")
    if level == 0:
        return TimeHistory(history.accelerations.copy(), history.dt)
    rng = np.random.default_rng() if rng is None else rng
    x = history.accelerations
    rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
    noise = rng.standard_normal(x.shape) * (level * rms)
    return TimeHistory(x + noise, history.dt)


def normalize_psd_set(psd: PsdSet) -> PsdSet:
    """Divide known rows by their single global maximum; unknown rows are zeroed."""
    known = np.asarray(psd.known_mask, bool)
    vals = psd.values[known]
    peak = vals.max() if vals.size else 0.0
    if not peak > 0:
        raise AllZero("no positive PSD value among known rows")
    out = np.zeros_like(psd.values)
    out[known] = vals / peak
    return replace(psd, values=out, normalized=True)


def psd_from_history(history: TimeHistory, cfg: WelchConfig = WelchConfig(),
                     discard: float = 5.0) -> PsdSet:
    h = history.discard(discard) if discard > 0 else history
    if abs(h.sample_rate - cfg.sample_rate) > 1e-9 * cfg.sample_rate:
        raise ConfigError("history sample rate does not match Welch config")
    return PsdSet(welch_psd_matrix(h.accelerations, cfg), cfg.freq_axis())
