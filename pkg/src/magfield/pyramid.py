"""Multi-scale image decompositions.

The complex steerable pyramid is built entirely in the Fourier domain:
radial raised-cosine bands one octave wide, angular ``cos^(D-1)`` lobes kept
on one half-plane only (so each subband is analytic and its argument is a
local phase), and subbands downsampled by cropping the spectrum. The squared
masks tile the spectrum, so reconstruction error is floating point only.

Both pyramids accept arrays with leading batch axes; the last two axes are
``H x W``. Boundaries are periodic (plain FFT) for the steerable pyramid and
reflected for the Laplacian pyramid.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
from scipy import ndimage

from .errors import InputError, ParameterError, StructureError


def default_depth(h, w):
    # deepest depth the size check allows: motion left in the lowpass residual is never amplified
    return max(1, int(np.floor(np.log2(min(h, w)))) - 2)


def _check_size(h, w, depth, orientations):
    if depth < 1:
        raise ParameterError(f"pyramid depth must be >= 1, got {depth}")
    if orientations < 2:
        raise ParameterError(f"need at least 2 orientations, got {orientations}")
    if min(h, w) < 2 ** (depth + 2):
        raise ParameterError(
            f"image {h}x{w} too small for depth {depth} (needs min side >= {2 ** (depth + 2)})"
        )


def _polar_grid(h, w):
    # centred (fftshift) layout, normalised so the Nyquist frequency is 1
    fy = (np.arange(h) - h // 2) / (h / 2)
    fx = (np.arange(w) - w // 2) / (w / 2)
    fy, fx = np.meshgrid(fy, fx, indexing="ij")
    return np.hypot(fx, fy), np.arctan2(fy, fx)


def _hi(radius, r0):
    """Raised-cosine highpass: 0 below r0/2, 1 above r0, one octave transition."""
    with np.errstate(divide="ignore"):
        lr = np.log2(radius / r0)
    out = np.cos(np.pi / 2 * np.clip(lr, -1.0, 0.0))
    out[lr <= -1] = 0.0
    out[lr >= 0] = 1.0
    return out


def _lo(radius, r0):
    return np.sqrt(1.0 - _hi(radius, r0) ** 2)


def _angle_mask(theta, orientation, orientations):
    n = orientations - 1
    const = 2.0 ** (2 * n) * factorial(n) ** 2 / (orientations * factorial(2 * n))
    d = np.mod(theta - np.pi * orientation / orientations + np.pi, 2 * np.pi) - np.pi
    return np.sqrt(const) * np.cos(d) ** n * (np.abs(d) < np.pi / 2)


@dataclass(frozen=True)
class PyramidFilters:
    """Frequency masks on the full-resolution centred FFT grid."""

    highpass: np.ndarray
    lowpass: np.ndarray
    bands: tuple  # bands[level][orientation]
    radial: tuple  # radial[level], kept for the tiling check
    angular: tuple  # angular[orientation] evaluated at theta
    angular_mirror: tuple  # angular[orientation] evaluated at theta + pi

    def tiling(self):
        """Sum of squared masks per bin; analytic bands count both half-planes."""
        total = self.highpass ** 2 + self.lowpass ** 2
        ang = sum(a ** 2 + b ** 2 for a, b in zip(self.angular, self.angular_mirror))
        for rad in self.radial:
            total = total + rad ** 2 * ang
        return total


@lru_cache(maxsize=32)
def csp_filters(h, w, depth, orientations=4):
    """Highpass, lowpass and ``depth x orientations`` analytic band masks."""
    _check_size(h, w, depth, orientations)
    radius, theta = _polar_grid(h, w)
    angular = tuple(_angle_mask(theta, o, orientations) for o in range(orientations))
    mirror = tuple(_angle_mask(theta + np.pi, o, orientations) for o in range(orientations))
    radial = tuple(_hi(radius, 2.0 ** -(lvl + 1)) * _lo(radius, 2.0 ** -lvl) for lvl in range(depth))
    bands = tuple(tuple(rad * ang for ang in angular) for rad in radial)
    filters = PyramidFilters(
        highpass=_hi(radius, 1.0),
        lowpass=_lo(radius, 2.0 ** -depth),
        bands=bands,
        radial=radial,
        angular=angular,
        angular_mirror=mirror,
    )
    for arr in [filters.highpass, filters.lowpass, *radial, *angular, *mirror]:
        arr.setflags(write=False)
    for lvl in bands:
        for arr in lvl:
            arr.setflags(write=False)
    return filters


def _level_shape(h, w, level):
    s = 2 ** level
    return -(-h // s), -(-w // s)


def _crop_slices(full, small):
    return tuple(slice(n // 2 - m // 2, n // 2 - m // 2 + m) for n, m in zip(full, small))


def _fft(x):
    return np.fft.fftshift(np.fft.fft2(x), axes=(-2, -1))


def _ifft(x):
    return np.fft.ifft2(np.fft.ifftshift(x, axes=(-2, -1)))


@dataclass
class SteerablePyramid:
    highpass: np.ndarray
    lowpass: np.ndarray
    bands: list  # bands[level][orientation], complex, leading batch axes kept
    shape: tuple
    depth: int
    orientations: int
    extra: dict = field(default_factory=dict)

    def coefficients(self):
        for lvl in self.bands:
            yield from lvl

    def map_bands(self, fn):
        """New pyramid with ``fn`` applied to every complex subband."""
        bands = [[fn(b) for b in lvl] for lvl in self.bands]
        return SteerablePyramid(self.highpass, self.lowpass, bands, self.shape, self.depth, self.orientations)


def csp_build(image, depth=None, orientations=4):
    """Complex steerable pyramid of a single-channel image (or a batch of them)."""
    image = np.asarray(image, dtype=float)
    if image.ndim < 2:
        raise StructureError("csp_build expects at least a 2-D array")
    if not np.all(np.isfinite(image)):
        raise InputError("image contains NaN or infinite values")
    h, w = image.shape[-2:]
    depth = default_depth(h, w) if depth is None else depth
    flt = csp_filters(h, w, depth, orientations)
    spec = _fft(image)
    highpass = _ifft(spec * flt.highpass).real
    bands = []
    for lvl in range(depth):
        small = _level_shape(h, w, lvl)
        sl = (Ellipsis,) + _crop_slices((h, w), small)
        scale = small[0] * small[1] / (h * w)
        bands.append([_ifft((spec * mask)[sl]) * scale for mask in flt.bands[lvl]])
    small = _level_shape(h, w, depth)
    sl = (Ellipsis,) + _crop_slices((h, w), small)
    lowpass = _ifft((spec * flt.lowpass)[sl]).real * (small[0] * small[1] / (h * w))
    return SteerablePyramid(highpass, lowpass, bands, (h, w), depth, orientations)


def csp_collapse(pyr):
    """Invert :func:`csp_build`; analytic bands contribute twice their real part."""
    h, w = pyr.shape
    if len(pyr.bands) != pyr.depth or any(len(lvl) != pyr.orientations for lvl in pyr.bands):
        raise StructureError("pyramid band layout does not match depth/orientations")
    flt = csp_filters(h, w, pyr.depth, pyr.orientations)
    if pyr.highpass.shape[-2:] != (h, w):
        raise StructureError("highpass residual has wrong shape")
    batch = pyr.highpass.shape[:-2]

    real_spec = _fft(pyr.highpass) * flt.highpass
    small = _level_shape(h, w, pyr.depth)
    if pyr.lowpass.shape[-2:] != small:
        raise StructureError("lowpass residual has wrong shape")
    padded = np.zeros(batch + (h, w), dtype=complex)
    padded[(Ellipsis,) + _crop_slices((h, w), small)] = _fft(pyr.lowpass) * (h * w / (small[0] * small[1]))
    real_spec = real_spec + padded * flt.lowpass

    analytic = np.zeros(batch + (h, w), dtype=complex)
    for lvl, level_bands in enumerate(pyr.bands):
        small = _level_shape(h, w, lvl)
        sl = (Ellipsis,) + _crop_slices((h, w), small)
        scale = h * w / (small[0] * small[1])
        for mask, band in zip(flt.bands[lvl], level_bands):
            if band.shape[-2:] != small:
                raise StructureError(f"level {lvl} band has shape {band.shape[-2:]}, expected {small}")
            analytic[sl] += _fft(band) * scale * mask[sl]
    return _ifft(real_spec).real + 2.0 * _ifft(analytic).real


def phase_of(subband):
    return np.angle(subband)


def amplitude_of(subband):
    return np.abs(subband)


# Laplacian pyramid -----------------------------------------------------------

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur(img, kernel, mode="reflect"):
    out = ndimage.convolve1d(img, kernel, axis=0, mode=mode)
    return ndimage.convolve1d(out, kernel, axis=1, mode=mode)


def _reduce(img):
    return _blur(img, BINOMIAL5)[::2, ::2]


def _expand(img, shape):
    up = np.zeros(tuple(shape[:2]) + img.shape[2:], dtype=img.dtype)
    up[::2, ::2] = img
    # "mirror" keeps the zero-insertion parity across the border, so constants expand to constants
    return _blur(up, 2.0 * BINOMIAL5, mode="mirror")


@dataclass
class LaplacianPyramid:
    bands: list
    residual: np.ndarray


def laplacian_build(image, depth):
    """``depth`` band-pass levels plus a lowpass residual; axes 0,1 are spatial."""
    image = np.asarray(image, dtype=float)
    if depth < 1 or min(image.shape[:2]) < 2 ** depth:
        raise ParameterError(f"depth {depth} too large for image of shape {image.shape[:2]}")
    bands = []
    current = image
    for _ in range(depth):
        low = _reduce(current)
        bands.append(current - _expand(low, current.shape))
        current = low
    return LaplacianPyramid(bands, current)


def laplacian_collapse(pyr):
    current = pyr.residual
    for band in reversed(pyr.bands):
        current = band + _expand(current, band.shape)
    return current
