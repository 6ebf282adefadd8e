"""Ultrasonic amplitude-modulation chain and spectrum utilities.

The transmit side rides a low-frequency command waveform on an ultrasonic
carrier; the receive side models a microphone whose quadratic nonlinearity
folds the envelope back into the audible band, followed by low-pass
filtering and DC removal.  A banded spectrum analyzer and WAV file I/O
round out the module so the same code serves both tests and the CLI.

All operations are pure functions of their inputs and are safe to call
concurrently.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.io import wavfile
from scipy.signal.windows import hann

#: Default simulation rate.  Its Nyquist frequency (96 kHz) comfortably
#: contains the 40.2 kHz carrier and the 80.4 kHz second-harmonic image
#: produced by the square-law receiver.
DEFAULT_SAMPLE_RATE_HZ = 192_000

#: Carrier used by the reference transmitter configuration (12 elements).
DEFAULT_CARRIER_HZ = 40_200.0

#: Receiver low-pass cutoff applied after the nonlinearity.
DEFAULT_CUTOFF_HZ = 8_000.0

#: Reported band levels never fall below this value relative to full scale.
ANALYZER_FLOOR_DB = -200.0


@dataclass
class Waveform:
    """Uniformly sampled real-valued signal.

    Parameters
    ----------
    sample_rate_hz : int
        Sampling rate in samples/second, > 0.
    samples : array_like
        Real amplitudes, nominal full scale +-1.  Must be non-empty.
    meta : dict, optional
        Free-form annotations (e.g. ``degenerate`` set by the demodulator).
    """

    sample_rate_hz: int
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValueError("samples must be non-empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def nyquist_hz(self) -> float:
        return self.sample_rate_hz / 2.0


@dataclass(frozen=True)
class NonlinearCoeffs:
    """Microphone front-end model ``y = a1*x + a2*x**2``.

    ``a2`` drives the envelope downconversion; ``a1`` lets the simulated
    microphone also pass ordinary linear content.  Both are dimensionless
    and configurable because no absolute hardware values are claimed.
    """

    a1: float = 1.0
    a2: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.a1) and np.isfinite(self.a2)):
            raise ValueError("coefficients must be finite")
        if self.a2 < 0:
            raise ValueError(f"a2 must be >= 0, got {self.a2}")


DEFAULT_COEFFS = NonlinearCoeffs()


def modulate(baseband: Waveform, carrier_hz: float = DEFAULT_CARRIER_HZ,
             depth: float = 1.0) -> Waveform:
    """Amplitude-modulate a baseband command onto an ultrasonic carrier.

    Computes ``out[n] = (1 + depth*v[n]) * cos(2*pi*carrier_hz*n/fs)``.
    With ``depth == 1`` this is exactly carrier-plus-product modulation:
    the carrier line stays at unit amplitude and the command appears as
    symmetric sidebands.

    Parameters
    ----------
    baseband : Waveform
        Command signal ``v``; ``max(|v|) <= 1`` (over-modulation would
        break the envelope's sign and is rejected).
    carrier_hz : float
        Carrier frequency, strictly below Nyquist.
    depth : float
        Modulation depth in ``(0, 1]``.

    Returns
    -------
    Waveform
        Same length and rate as ``baseband``.
    """
    if not 0.0 < depth <= 1.0:
        raise ValueError(f"depth must be in (0, 1], got {depth}")
    if not 0.0 < carrier_hz < baseband.nyquist_hz:
        raise ValueError(
            f"carrier_hz must lie in (0, Nyquist={baseband.nyquist_hz:g}), got {carrier_hz:g}")
    v = baseband.samples
    peak = float(np.max(np.abs(v)))
    if peak > 1.0:
        raise ValueError(f"baseband exceeds +-1 full scale (peak {peak:g}); rescale it first")
    n = np.arange(v.size)
    carrier = np.cos(2.0 * np.pi * carrier_hz * n / baseband.sample_rate_hz)
    return Waveform(baseband.sample_rate_hz, (1.0 + depth * v) * carrier)


def mic_nonlinear(wf: Waveform, coeffs: NonlinearCoeffs = DEFAULT_COEFFS) -> Waveform:
    """Apply the pointwise microphone nonlinearity ``a1*x + a2*x**2``."""
    x = wf.samples
    return Waveform(wf.sample_rate_hz, coeffs.a1 * x + coeffs.a2 * x * x)


def lowpass(wf: Waveform, cutoff_hz: float) -> Waveform:
    """Zero-phase low-pass filter.

    Realized as a frequency-sampling filter: the real FFT spectrum is
    multiplied by a raised-cosine mask that is exactly 1 up to
    ``cutoff_hz``, tapers to 0 at ``1.25 * cutoff_hz``, and is exactly 0
    beyond.  The realization is deterministic, exactly linear, has zero
    passband ripple and zero phase, and attenuation at ``1.5 * cutoff_hz``
    is total, so waveform-shape comparisons against analytic references
    remain valid.  (Being an FFT method it treats the buffer as periodic;
    test signals are built on-bin so edge effects vanish.)
    """
    nyq = wf.nyquist_hz
    if not 0.0 < cutoff_hz < nyq:
        raise ValueError(f"cutoff_hz must lie in (0, Nyquist={nyq:g}), got {cutoff_hz:g}")
    n = wf.samples.size
    spectrum = np.fft.rfft(wf.samples)
    freqs = np.fft.rfftfreq(n, d=1.0 / wf.sample_rate_hz)
    stop = min(1.25 * cutoff_hz, nyq)
    mask = np.ones_like(freqs)
    if stop > cutoff_hz:
        trans = (freqs > cutoff_hz) & (freqs < stop)
        mask[trans] = 0.5 * (1.0 + np.cos(np.pi * (freqs[trans] - cutoff_hz) / (stop - cutoff_hz)))
    mask[freqs >= stop] = 0.0
    return Waveform(wf.sample_rate_hz, np.fft.irfft(spectrum * mask, n=n))


def recover_baseband(passband: Waveform, coeffs: NonlinearCoeffs = DEFAULT_COEFFS,
                     cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> Waveform:
    """Demodulate a received passband signal back to the command baseband.

    Composition of :func:`mic_nonlinear` and :func:`lowpass` followed by
    mean (DC) removal.  For an input ``(1+V)cos(wt)`` with ``V``
    band-limited below ``cutoff_hz/2`` the output approximates
    ``(a2/2)*(2V + V**2)`` minus its mean, which correlates >= 0.99 with
    ``V`` for ``|V| <= 0.5``.

    An all-zero input returns an all-zero waveform with
    ``meta["degenerate"] = True``.
    """
    if cutoff_hz >= passband.nyquist_hz:
        raise ValueError("cutoff must be below Nyquist")
    if not np.any(passband.samples):
        return Waveform(passband.sample_rate_hz, np.zeros_like(passband.samples),
                        meta={"degenerate": True})
    mixed = mic_nonlinear(passband, coeffs)
    base = lowpass(mixed, cutoff_hz)
    out = base.samples - np.mean(base.samples)
    return Waveform(passband.sample_rate_hz, out)


def _validate_bands(bands, nyq):
    if not bands:
        raise ValueError("band list must be non-empty")
    ordered = sorted((float(lo), float(hi)) for lo, hi in bands)
    for lo, hi in ordered:
        if not (0.0 < lo < hi < nyq):
            raise ValueError(f"band ({lo:g}, {hi:g}) must satisfy 0 < lo < hi < Nyquist={nyq:g}")
    for (_, hi_prev), (lo_next, _) in zip(ordered, ordered[1:]):
        if lo_next < hi_prev:
            raise ValueError(f"bands overlap near {lo_next:g} Hz")


def band_spectrum(wf: Waveform, bands, full_scale_db_spl: float = 94.0) -> list[float]:
    """Measure per-band levels in dB SPL relative to a full-scale reference.

    A Hann window (periodic form) is applied and the one-sided power
    spectrum is summed over each band with noise-power normalization
    ``sum(w**2)``, so band totals obey Parseval and an on-bin full-scale
    sine reads exactly ``full_scale_db_spl`` in its band.  Bands are
    half-open ``[lo, hi)`` in Hz.  Levels are floored at
    ``ANALYZER_FLOOR_DB`` relative to full scale.

    Parameters
    ----------
    wf : Waveform
    bands : list of (f_lo, f_hi)
        Non-overlapping bands inside (0, Nyquist).
    full_scale_db_spl : float
        SPL assigned to a full-scale (+-1) sine; the digital-to-SPL anchor.

    Returns
    -------
    list of float
        One level per band, in the order given.
    """
    _validate_bands(bands, wf.nyquist_hz)
    n = wf.samples.size
    window = hann(n, sym=False)
    spectrum = np.fft.rfft(wf.samples * window)
    power_bins = np.abs(spectrum) ** 2
    # One-sided doubling, except DC and (for even n) the Nyquist bin.
    scale = np.full(power_bins.shape, 2.0)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0
    power_bins *= scale / (n * np.sum(window ** 2))
    freqs = np.fft.rfftfreq(n, d=1.0 / wf.sample_rate_hz)
    floor = 10.0 ** (ANALYZER_FLOOR_DB / 10.0)
    levels = []
    for lo, hi in bands:
        sel = (freqs >= lo) & (freqs < hi)
        mean_square = float(np.sum(power_bins[sel]))
        rel = max(mean_square / 0.5, floor)  # full-scale sine mean square = 0.5
        levels.append(full_scale_db_spl + 10.0 * np.log10(rel))
    return levels


def correlation(a, b) -> float:
    """Pearson correlation between two equal-length signals.

    Accepts :class:`Waveform` or plain arrays.  Returns 0.0 when either
    input has zero variance.
    """
    xa = a.samples if isinstance(a, Waveform) else np.asarray(a, dtype=np.float64)
    xb = b.samples if isinstance(b, Waveform) else np.asarray(b, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"length mismatch: {xa.shape} vs {xb.shape}")
    xa = xa - np.mean(xa)
    xb = xb - np.mean(xb)
    denom = np.sqrt(np.sum(xa * xa) * np.sum(xb * xb))
    if denom == 0.0:
        return 0.0
    return float(np.sum(xa * xb) / denom)


def read_wav(path) -> Waveform:
    """Read a mono RIFF/WAVE file (16-bit PCM or 32-bit float).

    Integer samples are rescaled to nominal +-1 full scale; the sample
    rate is preserved exactly.
    """
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; "
                         "use 16-bit PCM or 32-bit float")
    return Waveform(int(rate), samples)


def write_wav(path, wf: Waveform, sample_format: str = "float32") -> None:
    """Write a mono WAV file as 32-bit float (default) or 16-bit PCM."""
    if sample_format == "float32":
        wavfile.write(path, wf.sample_rate_hz, wf.samples.astype(np.float32))
    elif sample_format == "pcm16":
        clipped = np.clip(wf.samples, -1.0, 1.0)
        wavfile.write(path, wf.sample_rate_hz, np.round(clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unknown sample_format {sample_format!r}; use 'float32' or 'pcm16'")
