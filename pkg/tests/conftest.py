import numpy as np

from metasonic.signals import Waveform


def bandlimited_baseband(rng, n, fs, f_max_hz, peak):
    """Random periodic baseband with content strictly below f_max_hz.

    Built by inverse FFT of random coefficients on exact bins, so every
    component is on-bin and FFT-based filtering has no leakage - keeps
    analytic oracles exact.
    """
    spec = np.zeros(n // 2 + 1, dtype=complex)
    k_max = int(f_max_hz * n / fs)
    coeffs = rng.random(k_max - 1) * np.exp(2j * np.pi * rng.random(k_max - 1))
    spec[1:k_max] = coeffs
    x = np.fft.irfft(spec, n=n)
    return x / np.max(np.abs(x)) * peak


def tone(fs, n, f_hz, amplitude=1.0, phase=0.0):
    t = np.arange(n) / fs
    return amplitude * np.sin(2 * np.pi * f_hz * t + phase)


def make_waveform(fs, samples):
    return Waveform(fs, np.asarray(samples, dtype=float))
