"""Analytic test scenes, ground-truth magnified renders and evaluation metrics.

Scenes are made of soft primitives whose centres oscillate sinusoidally. A
ground-truth sequence at magnification factor ``m`` simply scales every
oscillation amplitude by ``m`` and is rendered through the same quadrature as
learned fields, so renderer mismatch never enters a comparison.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.registration import phase_cross_correlation

from .errors import InputError, ParameterError
from .field import RenderConfig, orbit_camera, render_image
from .magnify2d import COLOR, FrameSequence


@dataclass
class Primitive:
    """Soft sphere (Gaussian density, ``size`` = std radius) or box (``size`` = half extent)."""

    center: tuple
    size: float
    color: tuple
    density: float = 20.0
    shape: str = "sphere"
    amplitude: tuple = (0.0, 0.0, 0.0)
    frequency: float = 4.0
    phase: float = 0.0

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ParameterError(f"unknown primitive shape {self.shape!r}")
        self.center = np.asarray(self.center, dtype=float)
        self.color = np.asarray(self.color, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)

    def center_at(self, seconds, factor=1.0):
        return self.center + factor * self.amplitude * np.sin(2 * np.pi * self.frequency * seconds + self.phase)

    def density_at(self, points, center):
        d = (points - center) / self.size
        if self.shape == "sphere":
            return self.density * np.exp(-0.5 * np.sum(d * d, axis=-1))
        # p-norm of the axis distances (p = 8) acts as a smooth maximum
        return self.density * np.exp(-0.5 * np.sum(d ** 8, axis=-1))

    def to_dict(self):
        return {
            "center": self.center.tolist(), "size": self.size, "color": self.color.tolist(),
            "density": self.density, "shape": self.shape, "amplitude": self.amplitude.tolist(),
            "frequency": self.frequency, "phase": self.phase,
        }


@dataclass
class SceneSpec:
    primitives: list
    cameras: list
    duration: float = 1.0
    fps: float = 30.0
    factors: tuple = (5, 10, 20, 50, 100)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        for prim in self.primitives:
            if np.any(prim.amplitude != 0) and prim.frequency >= self.fps / 2:
                raise ParameterError(f"motion at {prim.frequency} Hz is not below Nyquist ({self.fps / 2} Hz)")
            if np.linalg.norm(prim.amplitude) > 0.1 * prim.size:
                raise ParameterError("motion amplitude exceeds 0.1 x primitive size")

    @property
    def n_frames(self):
        return int(round(self.duration * self.fps))

    def to_dict(self):
        r = self.render
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "cameras": [c.to_dict() for c in self.cameras],
            "duration": self.duration, "fps": self.fps, "factors": list(self.factors),
            "render": {"n_samples": r.n_samples, "near": r.near, "far": r.far,
                       "background": list(r.background), "bound": r.bound},
        }

    @classmethod
    def from_dict(cls, d):
        from .field import Camera

        try:
            prims = [Primitive(**p) for p in d["primitives"]]
            cams = [Camera.from_dict(c) for c in d["cameras"]]
            render = RenderConfig(**{**d.get("render", {}), "background": tuple(d.get("render", {}).get("background", (1.0, 1.0, 1.0)))})
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed scene spec: {exc}") from exc
        return cls(prims, cams, d.get("duration", 1.0), d.get("fps", 30.0), tuple(d.get("factors", (5, 10, 20, 50, 100))), render)


class AnalyticField:
    """Density/color field of a scene at a given magnification factor.

    ``t`` passed to :meth:`query` is a frame index; time is ``t / fps``.
    """

    def __init__(self, spec, factor=1.0):
        self.spec = spec
        self.factor = factor
        self.render = spec.render

    def query(self, points, dirs=None, t=0):
        seconds = (0 if t is None else t) / self.spec.fps
        dens = []
        for prim in self.spec.primitives:
            dens.append(prim.density_at(points, prim.center_at(seconds, self.factor)))
        dens = np.stack(dens, axis=-1)
        sigma = dens.sum(axis=-1)
        colors = np.stack([p.color for p in self.spec.primitives])
        rgb = dens @ colors / np.maximum(sigma, 1e-12)[:, None]
        return rgb, sigma


def gen_scene(spec, factor=1.0):
    """One :class:`FrameSequence` per camera with motion scaled by ``factor``."""
    if factor < 1:
        raise ParameterError("magnification factor must be >= 1")
    fld = AnalyticField(spec, factor)
    out = []
    for cam in spec.cameras:
        frames = np.stack([render_image(fld, cam, t) for t in range(spec.n_frames)])
        out.append(FrameSequence(np.clip(frames, 0, 1), spec.fps, COLOR))
    return out


def stack_views(seqs):
    """``V x T x H x W x 3`` array from per-camera sequences."""
    return np.stack([s.frames for s in seqs])


def ring_cameras(n, radius=3.0, size=32, fov=40.0, elevation=20.0, start=0.0):
    return [orbit_camera(start + 360.0 * i / n, elevation, radius, size, fov) for i in range(n)]


def one_sphere_scene(size=64, n_views=8, amplitude=(0.0, 0.0, 0.0), frequency=4.0, n_samples=32):
    prims = [Primitive((0.0, 0.0, 0.0), 0.3, (0.9, 0.3, 0.2), 20.0, amplitude=amplitude, frequency=frequency)]
    cams = ring_cameras(n_views, size=size, fov=30.0)
    return SceneSpec(prims, cams, render=RenderConfig(n_samples=n_samples, near=2.0, far=4.0))


def oscillating_scene(size=32, n_views=6, amplitude=0.01, frequency=4.0, n_samples=32, fov=30.0, elevation=20.0):
    """A moving sphere next to a static box; motion is along x."""
    prims = [
        Primitive((0.0, -0.25, 0.05), 0.22, (0.85, 0.25, 0.2), 25.0,
                  amplitude=(amplitude, 0.0, 0.0), frequency=frequency),
        Primitive((0.0, 0.35, -0.1), 0.18, (0.2, 0.4, 0.85), 25.0, shape="box"),
    ]
    cams = ring_cameras(n_views, size=size, fov=fov, elevation=elevation, start=15.0)
    return SceneSpec(prims, cams, render=RenderConfig(n_samples=n_samples, near=2.0, far=4.0))


def two_oscillator_scene(size=32, n_views=6, amplitude=0.01, n_samples=32, fov=30.0):
    """Two spheres vibrating vertically at 4 Hz and 10 Hz.

    They sit on opposite corners of a cube so their footprints on the xy, xz
    and yz planes stay apart; spheres that share a plane footprint share
    tri-plane texels, and magnifying one would move the other.
    """
    prims = [
        Primitive((-0.3, -0.3, -0.3), 0.15, (0.85, 0.25, 0.2), 25.0, amplitude=(0.0, 0.0, amplitude), frequency=4.0),
        Primitive((0.3, 0.3, 0.3), 0.15, (0.2, 0.5, 0.85), 25.0, amplitude=(0.0, 0.0, amplitude), frequency=10.0),
    ]
    cams = ring_cameras(n_views, size=size, fov=fov, elevation=10.0, start=15.0)
    return SceneSpec(prims, cams, render=RenderConfig(n_samples=n_samples, near=2.0, far=4.0))


# Noise -------------------------------------------------------------------------


def add_noise(seq, variance, seed=0):
    """i.i.d. Gaussian noise of the given variance, clamped to [0, 1]."""
    if variance < 0:
        raise ParameterError("noise variance must be >= 0")
    if variance == 0:
        return FrameSequence(seq.frames.copy(), seq.fps, seq.kind)
    rng = np.random.default_rng(seed)
    noisy = seq.frames + rng.normal(0.0, np.sqrt(variance), seq.frames.shape)
    if seq.kind == COLOR:
        noisy = np.clip(noisy, 0.0, 1.0)
    return FrameSequence(noisy, seq.fps, seq.kind)


# Metrics -------------------------------------------------------------------------

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5


def _as_hwc(img):
    img = np.asarray(img, dtype=float)
    return img[..., None] if img.ndim == 2 else img


def ssim(a, b):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, L = 1) over channels and the
    pixels whose window lies entirely inside the image."""
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < 2 * SSIM_RADIUS + 1:
        raise ParameterError("images must be at least 11 pixels on each side")

    def blur(x):
        return ndimage.gaussian_filter(x, sigma=(SSIM_SIGMA, SSIM_SIGMA, 0), truncate=SSIM_RADIUS / SSIM_SIGMA)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    r = SSIM_RADIUS
    return float(np.mean((num / den)[r:-r, r:-r]))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for peak 1; ``inf`` on exact match."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    return float("inf") if mse == 0 else float(-10 * np.log10(mse))


def sequence_ssim(a, b):
    fa = a.frames if isinstance(a, FrameSequence) else np.asarray(a)
    fb = b.frames if isinstance(b, FrameSequence) else np.asarray(b)
    return np.array([ssim(x, y) for x, y in zip(fa, fb)])


@dataclass
class EvalReport:
    ssim: list
    psnr: list
    displacement: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))

    @property
    def mean_psnr(self):
        vals = np.asarray(self.psnr, dtype=float)
        return float("inf") if np.all(np.isinf(vals)) else float(np.mean(vals[np.isfinite(vals)]))

    def to_dict(self):
        def num(x):
            return "inf" if np.isinf(x) else float(x)

        return {
            "ssim": [float(s) for s in self.ssim], "psnr": [num(p) for p in self.psnr],
            "mean_ssim": self.mean_ssim, "mean_psnr": num(self.mean_psnr),
            "displacement": {str(k): float(v) for k, v in self.displacement.items()},
            "runtime": self.runtime,
        }


def evaluate(pred, truth, region=None, freqs=()):
    """Per-frame SSIM/PSNR and, when ``region`` is given, displacement amplitudes
    (pixels, dominant axis) of ``pred`` at each frequency in ``freqs``."""
    start = time.perf_counter()
    fp = pred.frames if isinstance(pred, FrameSequence) else np.asarray(pred)
    ft = truth.frames if isinstance(truth, FrameSequence) else np.asarray(truth)
    if fp.shape != ft.shape:
        raise ParameterError(f"sequence shapes differ: {fp.shape} vs {ft.shape}")
    report = EvalReport([ssim(x, y) for x, y in zip(fp, ft)], [psnr(x, y) for x, y in zip(fp, ft)])
    if region is not None and freqs:
        fps = pred.fps if isinstance(pred, FrameSequence) else 30.0
        disp = measure_displacement(fp, region=region).shifts
        for f in freqs:
            report.displacement[f] = max(oscillation_amplitude(disp[:, 0], fps, f),
                                         oscillation_amplitude(disp[:, 1], fps, f))
    report.runtime = time.perf_counter() - start
    return report


# Displacement measurement ----------------------------------------------------------


@dataclass
class Displacement:
    shifts: np.ndarray  # T x 2, (dy, dx) of each frame relative to the reference
    confident: bool


def measure_displacement(seq, reference=0, region=None, upsample=200, min_std=1e-4):
    """Sub-pixel translation of each frame relative to ``reference``.

    Cross-correlation peak refined by upsampled DFT; ``region`` is
    ``(y0, y1, x0, x1)``. A nearly flat region yields zeros and
    ``confident=False``.
    """
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=float)
    if frames.ndim == 4:
        frames = frames.mean(axis=-1)
    if region is not None:
        y0, y1, x0, x1 = region
        frames = frames[:, y0:y1, x0:x1]
    ref = frames[reference] - frames[reference].mean()
    if ref.std() < min_std:
        return Displacement(np.zeros((len(frames), 2)), False)
    out = np.zeros((len(frames), 2))
    for t, frame in enumerate(frames):
        if t == reference:
            continue
        shift, _, _ = phase_cross_correlation(ref, frame - frame.mean(), upsample_factor=upsample,
                                              normalization=None)
        out[t] = -shift
    return Displacement(out, True)


def oscillation_amplitude(trajectory, fps, freq):
    """Amplitude of the sinusoid at ``freq`` Hz in a 1-D trajectory."""
    x = np.asarray(trajectory, dtype=float)
    n = len(x)
    k = int(round(freq * n / fps))
    return float(2.0 * np.abs(np.fft.fft(x - x.mean())[k]) / n)


def xt_slice(seq, row=None, col=None):
    """Stack one pixel row (or column) across all frames: ``T x len x C``."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if frames.ndim == 3:
        frames = frames[..., None]
    if (row is None) == (col is None):
        raise ParameterError("give exactly one of row or col")
    if row is not None:
        if not 0 <= row < frames.shape[1]:
            raise ParameterError(f"row {row} out of bounds")
        return frames[:, row]
    if not 0 <= col < frames.shape[2]:
        raise ParameterError(f"column {col} out of bounds")
    return frames[:, :, col]


def clipped_fraction(seq, eps=1e-6):
    """Fraction of pixels the [0, 1] clamp would alter.

    Pass an unclamped result (``clamp=False`` in the 2D magnifiers); a pixel
    counts once if any of its channels leaves ``[-eps, 1 + eps]``.
    """
    f = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=float)
    if f.ndim == 3:
        f = f[..., None]
    return float(np.mean(np.any((f < -eps) | (f > 1 + eps), axis=-1)))


def bump_sequence(size=64, shift=0.1, frequency=4.0, fps=30.0, n_frames=30, var=32.0, background=0.0):
    """Isotropic Gaussian bump translating along x by ``shift * sin(2 pi f t)`` pixels.

    The bump peaks at 1 over a flat ``background``. Returns the sequence and
    the per-frame shift.
    """
    t = np.arange(n_frames) / fps
    delta = shift * np.sin(2 * np.pi * frequency * t)
    y, x = np.mgrid[0:size, 0:size].astype(float)
    c = size / 2
    frames = np.exp(-((x[None] - c - delta[:, None, None]) ** 2 + (y[None] - c) ** 2) / var)
    frames = background + (1.0 - background) * frames
    return FrameSequence(frames[..., None], fps), delta
