"""Eulerian magnification in the embedding space of a time-varying field.

Shift-network fields are magnified per render sample point: the outputs
``g_t(p)`` of all timesteps form a trajectory that is bandpassed and
amplified before being fed back into the positional encoding. Tri-plane
fields are magnified per plane as feature videos, either linearly per texel
or through phase amplification in a complex steerable pyramid. The
projection MLP is never modified.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError
from .field import (
    ENCODING,
    POSITION,
    ShiftNetwork,
    TimeVaryingField,
    TriPlane,
    apply_shift,
    composite,
    generate_rays,
    mlp_forward,
    render_image,
    sample_points,
)
from .magnify2d import COLOR, FEATURE, FrameSequence, linear_magnify, phase_magnify
from .temporal import BandpassSpec, amplify_array

POSITION_SHIFT = "posshift"
ENCODING_SHIFT = "encshift"
LINEAR_TRIPLANE = "linear-triplane"
PHASE_TRIPLANE = "phase-triplane"
STRATEGIES = (POSITION_SHIFT, ENCODING_SHIFT, LINEAR_TRIPLANE, PHASE_TRIPLANE)

_SHIFT_MODE = {POSITION_SHIFT: POSITION, ENCODING_SHIFT: ENCODING}


@dataclass(frozen=True)
class MagnificationRequest:
    strategy: str
    spec: BandpassSpec
    depth: int = None
    orientations: int = 4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def to_dict(self):
        return {
            "strategy": self.strategy, "f_lo": self.spec.f_lo, "f_hi": self.spec.f_hi,
            "alpha": self.spec.alpha, "depth": self.depth, "orientations": self.orientations,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["strategy"], BandpassSpec(d["f_lo"], d["f_hi"], d["alpha"]), d.get("depth"),
                   d.get("orientations", 4))


def check_compatible(tvf, strategy):
    first = tvf.embeddings[0]
    if strategy in _SHIFT_MODE:
        if not isinstance(first, ShiftNetwork) or first.mode != _SHIFT_MODE[strategy]:
            raise StructureError(f"strategy {strategy} needs {_SHIFT_MODE[strategy]}-shift networks")
    elif not isinstance(first, TriPlane):
        raise StructureError(f"strategy {strategy} needs tri-plane embeddings")


def _timesteps(tvf, timesteps):
    if timesteps is None:
        return list(range(len(tvf)))
    ts = list(timesteps)
    if any(not 0 <= t < len(tvf) for t in ts):
        raise ParameterError(f"timesteps must lie in [0, {len(tvf) - 1}]")
    return ts


def magnify_shift_field(tvf, req, camera, timesteps=None, chunk=2048):
    """Render ``camera`` with amplified shift-network trajectories.

    Sample points are the deterministic eval midpoints, hence identical for
    every timestep; each point's ``T``-step trajectory of ``g_t(p)`` is
    amplified in band before being applied inside the positional encoding.
    """
    check_compatible(tvf, req.strategy)
    req.spec.check(tvf.fps)
    ts = _timesteps(tvf, timesteps)
    mode = tvf.embeddings[0].mode
    cfg = tvf.render
    o, d = generate_rays(camera)
    out = np.empty((len(ts), o.shape[0], 3))
    for s in range(0, o.shape[0], chunk):
        oc, dc = o[s:s + chunk], d[s:s + chunk]
        _, pts, inside = sample_points(oc, dc, cfg)
        p_in = pts[inside]
        traj = np.stack([e(p_in).astype(float) for e in tvf.embeddings])
        traj = amplify_array(traj, tvf.fps, req.spec, axis=0)
        for i, t in enumerate(ts):
            rgb = np.zeros(inside.shape + (3,))
            sigma = np.zeros(inside.shape)
            if len(p_in):
                emb = apply_shift(p_in, traj[t], mode, tvf.posenc_cfg)
                c, sg, _ = mlp_forward(tvf.mlp, emb)
                rgb[inside] = c
                sigma[inside] = sg
            out[i, s:s + chunk] = composite(rgb, sigma, cfg)[0]
    frames = np.clip(out, 0.0, 1.0).reshape(len(ts), camera.height, camera.width, 3)
    return FrameSequence(frames, tvf.fps, COLOR)


def _plane_videos(tvf):
    return np.stack([e.planes for e in tvf.embeddings]).astype(float)  # T x 3 x R x R x C


def _rebuild(tvf, planes, req):
    dtype = tvf.embeddings[0].planes.dtype
    embs = [TriPlane(p.astype(dtype)) for p in planes]
    out = TimeVaryingField(tvf.mlp, embs, tvf.fps, tvf.render, tvf.posenc_cfg)
    out.magnification = req
    return out


def magnify_triplane_linear(tvf, spec):
    """Per-texel linear magnification of every plane's feature video."""
    check_compatible(tvf, LINEAR_TRIPLANE)
    if len(tvf) < 4:
        raise ParameterError("need at least 4 timesteps")
    videos = _plane_videos(tvf)
    out = np.empty_like(videos)
    for k in range(3):
        seq = FrameSequence(videos[:, k], tvf.fps, FEATURE)
        out[:, k] = linear_magnify(seq, spec, mode="pixel").frames
    return _rebuild(tvf, out, MagnificationRequest(LINEAR_TRIPLANE, spec))


def magnify_triplane_phase(tvf, spec, depth=None, orientations=4):
    """Phase-based magnification of every plane, each channel independently."""
    check_compatible(tvf, PHASE_TRIPLANE)
    if len(tvf) < 4:
        raise ParameterError("need at least 4 timesteps")
    videos = _plane_videos(tvf)
    out = np.empty_like(videos)
    for k in range(3):
        seq = FrameSequence(videos[:, k], tvf.fps, FEATURE)
        out[:, k] = phase_magnify(seq, spec, depth, orientations).frames
    return _rebuild(tvf, out, MagnificationRequest(PHASE_TRIPLANE, spec, depth, orientations))


def render_magnified(tvf, cameras, timesteps=None):
    """One color sequence per camera, rendered with the (magnified) embeddings."""
    ts = _timesteps(tvf, timesteps)
    seqs = []
    for cam in cameras:
        frames = np.stack([render_image(tvf, cam, t) for t in ts])
        seqs.append(FrameSequence(np.clip(frames, 0.0, 1.0), tvf.fps, COLOR))
    return seqs


def magnify(tvf, req, cameras, timesteps=None):
    """Apply any strategy and render every camera."""
    if req.strategy in _SHIFT_MODE:
        return [magnify_shift_field(tvf, req, cam, timesteps) for cam in cameras]
    if req.strategy == LINEAR_TRIPLANE:
        mag = magnify_triplane_linear(tvf, req.spec)
    else:
        mag = magnify_triplane_phase(tvf, req.spec, req.depth, req.orientations)
    return render_magnified(mag, cameras, timesteps)
