"""Temporal frequency analysis of per-location trajectories.

Every Eulerian path in the package (pixels, feature texels, shift-network
outputs at render sample points) ends up here: a ``T x D`` time-major array
is transformed along time, an ideal rectangular passband is isolated, and the
band is scaled and added back to the original signal.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError

REALNESS_TOL = 1e-9


@dataclass(frozen=True)
class BandpassSpec:
    """Passband ``[f_lo, f_hi]`` in Hz and amplification gain ``alpha``.

    A magnification factor ``m`` (total displacement multiplier) corresponds
    to ``alpha = m - 1``; see :meth:`from_factor`.
    """

    f_lo: float
    f_hi: float
    alpha: float

    def __post_init__(self):
        if not (np.isfinite(self.f_lo) and np.isfinite(self.f_hi) and np.isfinite(self.alpha)):
            raise ParameterError("band edges and alpha must be finite")
        if self.f_lo < 0 or self.f_hi < self.f_lo:
            raise ParameterError(f"invalid band [{self.f_lo}, {self.f_hi}]")
        if self.alpha < -1:
            raise ParameterError(f"alpha must be >= -1, got {self.alpha}")

    @classmethod
    def from_factor(cls, f_lo, f_hi, factor):
        return cls(f_lo, f_hi, factor - 1.0)

    def check(self, fps):
        if self.f_hi > fps / 2:
            raise ParameterError(f"f_hi={self.f_hi} exceeds Nyquist ({fps / 2} Hz)")


@dataclass
class TimeSeries:
    """``T x D`` real samples taken at ``fps`` Hz."""

    data: np.ndarray
    fps: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise StructureError(f"time series must be T x D with T >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("time series contains non-finite values")
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        self.data = data

    @property
    def length(self):
        return self.data.shape[0]


def dft_forward(series):
    """Unnormalized DFT along time: ``X[k] = sum_t x[t] exp(-2j pi k t / T)``."""
    return np.fft.fft(series.data, axis=0)


def dft_inverse(spectrum, fps=1.0, real=True):
    """Inverse of :func:`dft_forward`.

    With ``real=True`` the imaginary residue must be below ``REALNESS_TOL``
    relative to the signal magnitude; otherwise the spectrum was not
    conjugate-symmetric and a :class:`StructureError` is raised.
    """
    x = np.fft.ifft(np.asarray(spectrum), axis=0)
    if not real:
        return x
    if np.abs(x.imag).max(initial=0.0) > REALNESS_TOL * np.abs(x).max(initial=0.0):
        raise StructureError("spectrum is not conjugate-symmetric; inverse is not real")
    return TimeSeries(x.real, fps)


def band_mask(n, fps, f_lo, f_hi):
    """Boolean mask over DFT bins whose |frequency| lies in [f_lo, f_hi].

    Both edges are inclusive. Bin ``k`` has frequency ``min(k, n - k) * fps / n``,
    so negative-frequency mirrors are kept symmetrically.
    """
    k = np.arange(n)
    freq = np.minimum(k, n - k) * (fps / n)
    # relative slack so that edges landing exactly on a bin pass despite rounding
    slack = 1e-9 * max(fps, 1.0)
    mask = (freq >= f_lo - slack) & (freq <= f_hi + slack)
    # DC is never an edge tie: it passes only for f_lo == 0
    mask[0] = f_lo <= 0
    return mask


def _check_band(fps, f_lo, f_hi):
    if not (0 <= f_lo <= f_hi <= fps / 2):
        raise ParameterError(f"band [{f_lo}, {f_hi}] Hz invalid for fps={fps}")


def bandpass_array(data, fps, f_lo, f_hi, axis=0):
    """Ideal bandpass of a real array along ``axis``; the workhorse behind
    :func:`ideal_bandpass` for arbitrary trailing shapes."""
    _check_band(fps, f_lo, f_hi)
    data = np.asarray(data)
    n = data.shape[axis]
    mask = band_mask(n, fps, f_lo, f_hi)
    if not mask.any():
        return np.zeros_like(data, dtype=np.result_type(data.dtype, np.float32))
    spec = np.fft.fft(data, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n
    spec *= mask.reshape(shape)
    return np.fft.ifft(spec, axis=axis).real.astype(np.result_type(data.dtype, np.float32), copy=False)


def amplify_array(data, fps, spec, axis=0):
    """``data + alpha * bandpass(data)`` along ``axis``; exact identity at alpha=0."""
    _check_band(fps, spec.f_lo, spec.f_hi)
    data = np.asarray(data)
    if spec.alpha == 0:
        return data.copy()
    return data + spec.alpha * bandpass_array(data, fps, spec.f_lo, spec.f_hi, axis=axis)


def ideal_bandpass(series, f_lo, f_hi):
    return TimeSeries(bandpass_array(series.data, series.fps, f_lo, f_hi), series.fps)


def amplify_band(series, spec):
    return TimeSeries(amplify_array(series.data, series.fps, spec), series.fps)
