"""Eulerian magnification of frame sequences.

The same two routines serve rendered color videos (the 2D baselines) and the
per-channel feature videos formed by stacking tri-plane planes over time.
Only color sequences are clamped to [0, 1].
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, ParameterError, StructureError
from .pyramid import csp_build, csp_collapse, default_depth, laplacian_build, laplacian_collapse
from .temporal import BandpassSpec, amplify_array, bandpass_array

COLOR = "color"
FEATURE = "feature"


@dataclass
class FrameSequence:
    """``T x H x W x C`` frames sampled at ``fps``; ``kind`` is color or feature."""

    frames: np.ndarray
    fps: float
    kind: str = COLOR

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 3:
            frames = frames[..., None]
        if frames.ndim != 4:
            raise StructureError(f"frames must be T x H x W x C, got shape {frames.shape}")
        if self.kind not in (COLOR, FEATURE):
            raise ParameterError(f"unknown sequence kind {self.kind!r}")
        if not np.all(np.isfinite(frames)):
            raise InputError("frames contain non-finite values")
        if self.kind == COLOR:
            if frames.size and (frames.min() < -1e-6 or frames.max() > 1 + 1e-6):
                raise InputError("color frames must lie in [0, 1]")
            frames = np.clip(frames, 0.0, 1.0)
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        self.frames = frames

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    def with_frames(self, frames):
        return replace(self, frames=frames)


def _finish(seq, frames, clamp=True):
    if seq.kind == COLOR:
        if not clamp:
            return FrameSequence(frames, seq.fps, FEATURE)
        frames = np.clip(frames, 0.0, 1.0)
    return FrameSequence(frames, seq.fps, seq.kind)


def _check(seq, spec):
    if len(seq) < 4:
        raise ParameterError(f"need at least 4 frames for temporal filtering, got {len(seq)}")
    if not isinstance(spec, BandpassSpec):
        raise ParameterError("spec must be a BandpassSpec")
    spec.check(seq.fps)


def linear_magnify(seq, spec, mode="pixel", depth=None, clamp=True):
    """Amplify in-band temporal variation of every pixel (or Laplacian level).

    With ``clamp=False`` a color input comes back unclamped, tagged as a
    feature sequence so out-of-range values survive.
    """
    _check(seq, spec)
    if mode == "pixel":
        out = amplify_array(seq.frames, seq.fps, spec, axis=0)
    elif mode == "laplacian":
        h, w = seq.frames.shape[1:3]
        depth = depth or max(1, int(np.log2(min(h, w))) - 2)
        pyrs = [laplacian_build(f, depth) for f in seq.frames]
        levels = []
        for lvl in range(depth):
            stack = np.stack([p.bands[lvl] for p in pyrs])
            levels.append(amplify_array(stack, seq.fps, spec, axis=0))
        residual = amplify_array(np.stack([p.residual for p in pyrs]), seq.fps, spec, axis=0)
        out = np.empty_like(seq.frames)
        for t, pyr in enumerate(pyrs):
            pyr.bands = [lv[t] for lv in levels]
            pyr.residual = residual[t]
            out[t] = laplacian_collapse(pyr)
    else:
        raise ParameterError(f"unknown linear mode {mode!r}")
    return _finish(seq, out, clamp)


def phase_magnify(seq, spec, depth=None, orientations=4, clamp=True):
    """Amplify in-band variation of local phase in a complex steerable pyramid.

    Phase is measured against frame 0 (``arg(c_t * conj(c_0))``), bandpassed
    over time, scaled by alpha and added to each frame's phase. Amplitudes and
    both residuals are left untouched.
    """
    _check(seq, spec)
    t, h, w, c = seq.frames.shape
    depth = default_depth(h, w) if depth is None else depth
    out = np.empty_like(seq.frames)
    for ch in range(c):
        pyr = csp_build(seq.frames[..., ch], depth, orientations)
        if spec.alpha != 0:
            pyr = pyr.map_bands(lambda band: _shift_phase(band, seq.fps, spec))
        out[..., ch] = csp_collapse(pyr)
    return _finish(seq, out, clamp)


def _shift_phase(band, fps, spec):
    delta = np.angle(band * np.conj(band[:1]))
    boost = spec.alpha * bandpass_array(delta, fps, spec.f_lo, spec.f_hi, axis=0)
    return band * np.exp(1j * boost)
