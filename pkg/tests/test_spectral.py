import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from gnnoma.errors import AllZero, BadLength, TooShort
from gnnoma.spectral import (PsdSet, WelchConfig, cross_psd_matrix, fft, ifft, inject_noise,
                             normalize_psd_set, welch_psd, welch_psd_matrix)
from gnnoma.structural import TimeHistory

CFG = WelchConfig()


def dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def test_impulse_spectrum():
    x = np.zeros(8)
    x[0] = 1
    np.testing.assert_allclose(fft(x), np.ones(8))


def test_cosine_energy_at_bins():
    n, k = 64, 5
    X = np.abs(fft(np.cos(2 * np.pi * k * np.arange(n) / n)))
    assert set(np.flatnonzero(X > 1e-9)) == {k, n - k}


def test_fft_matches_dft_oracle(rng):
    x = rng.standard_normal(256)
    assert np.abs(fft(x) - dft(x)).max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(arrays(float, st.sampled_from([2, 8, 32, 128]),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_fft_oracle_and_roundtrip(x):
    assert np.abs(fft(x) - dft(x)).max() <= 1e-10 * max(1.0, np.abs(x).sum())
    np.testing.assert_allclose(ifft(fft(x)).real, x, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(BadLength):
        fft(np.ones(6))


def test_sine_peak_location():
    t = np.arange(12000) / 200.0
    psd, f = welch_psd(np.sin(2 * np.pi * 5 * t))
    assert psd.argmax() == np.abs(f - 5.0).argmin()


def test_zero_signal_zero_psd():
    psd, _ = welch_psd(np.zeros(4000))
    assert np.all(psd == 0)


def test_white_noise_variance(rng):
    totals = [welch_psd(rng.standard_normal(12000))[0].sum() * CFG.df for _ in range(20)]
    assert abs(np.mean(totals) - 1) < 0.10


def test_matches_scipy_welch(rng):
    x = rng.standard_normal((3, 6000))
    _, P = signal.welch(x, fs=200, window="hann", nperseg=1024, noverlap=512, detrend=False)
    np.testing.assert_allclose(welch_psd_matrix(x), P, rtol=1e-10, atol=1e-16)


def test_short_signal_rejected():
    with pytest.raises(TooShort):
        welch_psd(np.ones(100))


def test_coherent_pair_rank_one(rng):
    x = rng.standard_normal(6000)
    G = cross_psd_matrix(np.vstack([x, x]))
    np.testing.assert_allclose(G[:, 0, 0], G[:, 1, 1], rtol=1e-12)
    np.testing.assert_allclose(G[:, 0, 1], G[:, 0, 0], rtol=1e-12)
    s = np.linalg.svd(G, compute_uv=False)
    assert np.all(s[:, 1] <= 1e-10 * s[:, 0].max())


def test_independent_channels_low_coherence(rng):
    x = rng.standard_normal((2, 11776))  # 22 segments
    G = cross_psd_matrix(x)
    coh = np.abs(G[:, 0, 1]) ** 2 / (G[:, 0, 0].real * G[:, 1, 1].real)
    assert coh[1:-1].mean() < 0.2


def test_cross_diagonal_is_auto_psd(rng):
    x = rng.standard_normal((4, 5000))
    G = cross_psd_matrix(x)
    np.testing.assert_allclose(np.einsum("fii->if", G).real, welch_psd_matrix(x),
                               rtol=1e-12, atol=0)
    np.testing.assert_array_equal(G, np.conj(np.swapaxes(G, 1, 2)))


def test_noise_zero_level_bitwise(rng):
    h = TimeHistory(rng.standard_normal((3, 500)), 0.005)
    assert np.array_equal(inject_noise(h, 0.0, rng).accelerations, h.accelerations)


def test_noise_level_and_independence(rng):
    x = rng.standard_normal((2, 12000))
    x /= np.sqrt((x ** 2).mean(axis=1, keepdims=True))
    h = TimeHistory(x, 0.005)
    added = inject_noise(h, 0.1, rng).accelerations - x
    assert np.all(np.abs(np.sqrt((added ** 2).mean(axis=1)) / 0.1 - 1) < 0.03)
    assert abs(np.corrcoef(added)[0, 1]) < 0.05


def test_normalize_contract():
    v = np.array([[1.0, 4.0], [2.0, 0.5]])
    p = PsdSet(v, np.array([0.0, 1.0]))
    n = normalize_psd_set(p)
    np.testing.assert_allclose(n.values, v * 0.25)
    np.testing.assert_allclose(normalize_psd_set(n).values, n.values)
    with pytest.raises(AllZero):
        normalize_psd_set(PsdSet(np.zeros((2, 2)), np.array([0.0, 1.0])))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 5), elements=st.floats(1e-6, 1e6)))
def test_normalize_preserves_ratios(v):
    n = normalize_psd_set(PsdSet(v, np.arange(5.0))).values
    assert n.max() == 1.0
    np.testing.assert_allclose(n[0, 0] / n[2, 4], v[0, 0] / v[2, 4], rtol=1e-12)


def test_unknown_rows_zeroed():
    v = np.array([[1.0, 9.0], [2.0, 4.0]])
    n = normalize_psd_set(PsdSet(v, np.arange(2.0), np.array([False, True])))
    np.testing.assert_allclose(n.values, [[0.0, 0.0], [0.5, 1.0]])
