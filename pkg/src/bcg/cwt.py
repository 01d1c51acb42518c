"""Continuous wavelet transform with complex Morlet wavelets.

Coefficients are computed as

    W(tau) = dt * sum_m x[tau + m] * conj(psi(m * dt))

with ``psi`` L2-normalised, its support truncated at ``|t/s| <= 4`` and the
signal reflect-padded by the same half-width. Only the modulus is exposed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .types import SAMPLE_RATE_HZ, AccelSeries

SUPPORT_SIGMAS = 4.0
NYQUIST_HZ = SAMPLE_RATE_HZ / 2


@dataclass(frozen=True)
class MorletParams:
    omega0: float = 6.0

    def __post_init__(self) -> None:
        # below ~5 the zero-mean approximation of the uncorrected wavelet breaks down
        if self.omega0 < 5:
            raise ValueError("omega0 must be >= 5")


def morlet(t, s: float, params: MorletParams = MorletParams()):
    """Complex Morlet wavelet at time ``t`` (s) and scale ``s`` (s)."""
    if s <= 0:
        raise ValueError("scale must be positive")
    u = np.asarray(t, dtype=np.float64) / s
    out = np.pi ** -0.25 * s ** -0.5 * np.exp(1j * params.omega0 * u) * np.exp(-0.5 * u * u)
    if np.ndim(t) == 0:
        return complex(out)
    return out


def freq_to_scale(f_hz: float, params: MorletParams = MorletParams()) -> float:
    if f_hz <= 0:
        raise ValueError("frequency must be positive")
    return params.omega0 / (2 * np.pi * f_hz)


def scale_to_freq(s: float, params: MorletParams = MorletParams()) -> float:
    if s <= 0:
        raise ValueError("scale must be positive")
    return params.omega0 / (2 * np.pi * s)


def kernel_half_width(f_hz: float, params: MorletParams = MorletParams(),
                      fs: float = SAMPLE_RATE_HZ) -> int:
    return int(np.floor(SUPPORT_SIGMAS * freq_to_scale(f_hz, params) * fs))


def morlet_kernel(f_hz: float, params: MorletParams = MorletParams(),
                  fs: float = SAMPLE_RATE_HZ) -> np.ndarray:
    """Wavelet sampled at ``m / fs`` for ``m = -M..M``.

    Convolving with this array (not correlating) yields the conjugate inner
    product, because ``conj(psi(-t)) == psi(t)``.
    """
    half = kernel_half_width(f_hz, params, fs)
    t = np.arange(-half, half + 1) / fs
    return morlet(t, freq_to_scale(f_hz, params), params)


def reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into ``[0, n)`` by mirror reflection
    about the end samples (the edge sample is not repeated)."""
    idx = np.asarray(idx, dtype=np.int64)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    r = np.mod(idx, period)
    return np.where(r < n, r, period - r)


def _check_freq(f_hz: float, fs: float) -> None:
    if not np.isfinite(f_hz) or f_hz <= 0:
        raise ValueError("frequency must be positive")
    if f_hz >= fs / 2:
        raise ValueError(f"frequency {f_hz} Hz must be below Nyquist ({fs / 2} Hz)")


def _values(signal) -> tuple[np.ndarray, float]:
    if isinstance(signal, AccelSeries):
        return signal.values, signal.sample_rate_hz
    return np.asarray(signal, dtype=np.float64).reshape(-1), SAMPLE_RATE_HZ


def cwt_row(signal, f_hz: float, params: MorletParams = MorletParams()) -> np.ndarray:
    """|CWT| at one frequency, one value per input sample.

    ``signal`` is an :class:`AccelSeries` or a 1-D array sampled at 100 Hz.
    """
    x, fs = _values(signal)
    if x.size == 0:
        raise ValueError("signal is empty")
    _check_freq(f_hz, fs)
    kernel = morlet_kernel(f_hz, params, fs)
    half = (len(kernel) - 1) // 2
    padded = x[reflect_indices(np.arange(-half, x.size + half), x.size)]
    coeffs = fftconvolve(padded, kernel, mode="valid") / fs
    return np.abs(coeffs)


@dataclass(frozen=True, eq=False)
class Scalogram:
    freqs_hz: np.ndarray
    times_s: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self) -> None:
        if self.magnitude.shape != (len(self.freqs_hz), len(self.times_s)):
            raise ValueError("magnitude shape must be (len(freqs), len(times))")

    def to_csv(self, path_or_file, time_step: int = 1) -> None:
        """Write the grid: header row holds times, first column frequencies."""
        cols = slice(None, None, max(1, int(time_step)))
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            writer = csv.writer(fh)
            writer.writerow(["freq_hz\\time_s"] + [f"{t:.2f}" for t in self.times_s[cols]])
            for f, row in zip(self.freqs_hz, self.magnitude[:, cols]):
                writer.writerow([f"{f:g}"] + [f"{v:.6g}" for v in row])
        finally:
            if own:
                fh.close()


def scalogram(signal, freqs_hz: Sequence[float],
              params: MorletParams = MorletParams()) -> Scalogram:
    freqs = np.asarray(freqs_hz, dtype=np.float64).reshape(-1)
    if freqs.size == 0:
        raise ValueError("need at least one frequency")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequencies must be strictly increasing")
    x, fs = _values(signal)
    rows = np.vstack([cwt_row(signal, f, params) for f in freqs])
    return Scalogram(freqs, np.arange(x.size) / fs, rows)


class StreamingCwt:
    """Incremental |CWT| at one frequency.

    Trace sample ``i`` is emitted once raw sample ``i + M`` has arrived, so
    every emitted value equals the corresponding :func:`cwt_row` value of the
    full signal (up to float rounding). The left edge of the stream is
    reflect-padded like :func:`cwt_row`; :meth:`flush` pads the right edge.
    Not safe for concurrent use.
    """

    def __init__(self, f_hz: float, params: MorletParams = MorletParams(),
                 fs: float = SAMPLE_RATE_HZ):
        _check_freq(f_hz, fs)
        self.f_hz = f_hz
        self.fs = fs
        self._kernel = morlet_kernel(f_hz, params, fs)
        self.half = (len(self._kernel) - 1) // 2
        self._buf = np.empty(0)
        self._off = 0  # global index of _buf[0]
        self._total = 0
        self._next = 0  # next trace index to emit

    @property
    def emitted(self) -> int:
        return self._next

    def _emit(self, stop: int, right_reflect: bool) -> np.ndarray:
        if stop <= self._next:
            return np.empty(0)
        g = np.arange(self._next - self.half, stop + self.half)
        if right_reflect or self._next < self.half:
            g = reflect_indices(g, self._total)
        seg = self._buf[g - self._off]
        out = np.abs(fftconvolve(seg, self._kernel, mode="valid")) / self.fs
        self._next = stop
        keep_from = max(0, self._next - self.half - 1)
        if keep_from > self._off:
            self._buf = self._buf[keep_from - self._off:]
            self._off = keep_from
        return out

    def push(self, samples) -> np.ndarray:
        """Append raw samples; return the newly completed trace values."""
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        self._buf = np.concatenate([self._buf, samples])
        self._total += samples.size
        stop = self._total - self.half
        if self._total < self.half + 1:
            return np.empty(0)
        return self._emit(stop, right_reflect=False)

    def flush(self) -> np.ndarray:
        """Emit the remaining tail using right-edge reflection."""
        if self._total == 0:
            return np.empty(0)
        return self._emit(self._total, right_reflect=True)
