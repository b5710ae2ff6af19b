"""Radiance-field representation and emission-absorption rendering.

A field maps a point embedding to ``(rgb, sigma)`` through a projection MLP.
Two embedding families are supported:

* positional encoding driven by a per-timestep :class:`ShiftNetwork`, either
  shifting the point before encoding (``"position"``) or shifting the phase
  of every encoding frequency (``"encoding"``);
* a learnable :class:`TriPlane`, one per timestep.

The MLP is shared by all timesteps of a :class:`TimeVaryingField`. Anything
with a ``query(points, dirs, t) -> (rgb, sigma)`` method can be rendered,
including the analytic scenes of :mod:`magfield.harness`.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ParameterError, StructureError

POSITION = "position"
ENCODING = "encoding"


# Cameras and rays --------------------------------------------------------------


@dataclass
class Camera:
    """Pinhole camera; ``pose`` is a 3x4 camera-to-world transform.

    Camera axes follow the x-right, y-down, z-forward convention.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float).reshape(3, 4)
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be positive")
        rot = self.pose[:, :3]
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise ParameterError("camera rotation is not orthonormal")

    @property
    def center(self):
        return self.pose[:, 3]

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "pose": self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]), d["pose"])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward, eye])


def orbit_camera(azimuth, elevation, radius=3.0, size=32, fov=40.0, target=(0.0, 0.0, 0.0)):
    """Camera on a sphere around ``target``; angles in degrees, z is up."""
    az, el = np.radians(azimuth), np.radians(elevation)
    eye = np.asarray(target) + radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    focal = 0.5 * size / np.tan(np.radians(fov) / 2)
    return Camera(focal, focal, size / 2, size / 2, size, size, look_at(eye, target))


def generate_rays(camera):
    """World-space ray origins and unit directions, one per pixel in row-major order."""
    v, u = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    d = np.stack(
        [(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy, np.ones_like(u, dtype=float)],
        axis=-1,
    ).reshape(-1, 3)
    d = d @ camera.pose[:, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


# Encodings ---------------------------------------------------------------------


@dataclass(frozen=True)
class PosEncConfig:
    """``n_freqs`` frequencies ``omega_k = 2^(k-1) * pi``, k = 1..K."""

    n_freqs: int = 6

    def __post_init__(self):
        if self.n_freqs < 1:
            raise ParameterError("n_freqs must be >= 1")

    @property
    def omegas(self):
        return np.pi * 2.0 ** np.arange(self.n_freqs)

    @property
    def dim(self):
        return 6 * self.n_freqs


def posenc_args(p, cfg, phases=None):
    """Sinusoid arguments ``omega_k * p_a + phi_{k,a}``, shape ``(..., K, 3)``."""
    p = np.asarray(p)
    arg = cfg.omegas[:, None] * p[..., None, :]
    if phases is not None:
        arg = arg + np.asarray(phases).reshape(p.shape[:-1] + (cfg.n_freqs, 3))
    return arg


def posenc(p, cfg, phases=None):
    """Positional encoding with optional per-frequency, per-axis phases.

    Layout of the ``6K`` outputs: all sines then all cosines, each block
    ordered frequency-major then axis (``k0x k0y k0z k1x ...``). ``phases``
    uses the same ``(k, axis)`` order flattened to ``3K``.
    """
    arg = posenc_args(p, cfg, phases)
    flat = arg.reshape(arg.shape[:-2] + (-1,))
    return np.concatenate([np.sin(flat), np.cos(flat)], axis=-1)


# MLPs ----------------------------------------------------------------------------


class MLP:
    """Fully connected ReLU network; weights stored as ``(in, out)`` matrices."""

    def __init__(self, weights, biases):
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def create(cls, sizes, rng, dtype=np.float64, zero_last=False):
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_last:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / n_in) if not last else np.sqrt(1.0 / n_in), (n_in, n_out))
            weights.append(w.astype(dtype))
            biases.append(np.zeros(n_out, dtype=dtype))
        return cls(weights, biases)

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def forward(self, x, keep=False):
        """Output pre-activations; with ``keep=True`` also the layer inputs."""
        if x.shape[-1] != self.in_dim:
            raise StructureError(f"MLP expects {self.in_dim} inputs, got {x.shape[-1]}")
        x = x.astype(self.weights[0].dtype, copy=False)
        inputs = []
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(x)
            x = x @ w + b
            if i < n - 1:
                x = np.maximum(x, 0.0)
        return (x, inputs) if keep else x

    def backward(self, inputs, grad_out, want_params=True):
        """Gradients w.r.t. input and (optionally) parameters from cached inputs."""
        grads = {}
        g = grad_out
        for i in reversed(range(len(self.weights))):
            x = inputs[i]
            if want_params:
                grads[f"{i}.W"] = x.T @ g
                grads[f"{i}.b"] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (x > 0)
        return g, grads

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{i}.W"] = w
            out[f"{i}.b"] = b
        return out

    def copy(self):
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return MLP([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ProjectionMLP:
    """Embedding (plus optional encoded view direction) to ``(rgb, sigma)``.

    Two hidden ReLU layers; sigmoid color head and softplus density head.
    """

    def __init__(self, net, dir_freqs=0):
        self.net = net
        self.dir_freqs = dir_freqs

    @classmethod
    def create(cls, embed_dim, rng, hidden=64, dir_freqs=0, dtype=np.float64, sigma_bias=-2.0):
        in_dim = embed_dim + (6 * dir_freqs if dir_freqs else 0)
        net = MLP.create([in_dim, hidden, hidden, 4], rng, dtype)
        net.biases[-1][3] = sigma_bias
        return cls(net, dir_freqs)

    @property
    def embed_dim(self):
        return self.net.in_dim - 6 * self.dir_freqs

    def inputs(self, embedding, dirs=None):
        if self.dir_freqs:
            if dirs is None:
                raise StructureError("this MLP expects view directions")
            return np.concatenate([embedding, posenc(dirs, PosEncConfig(self.dir_freqs))], axis=-1)
        return embedding

    def __call__(self, embedding, dirs=None):
        rgb, sigma, _ = mlp_forward(self, embedding, dirs)
        return rgb, sigma

    def params(self):
        return self.net.params()

    def copy(self):
        return ProjectionMLP(self.net.copy(), self.dir_freqs)

    def astype(self, dtype):
        return ProjectionMLP(self.net.astype(dtype), self.dir_freqs)


def mlp_forward(mlp, embedding, dirs=None, keep=False):
    """Return ``rgb`` in [0,1]^3, ``sigma >= 0`` and (if ``keep``) a backward cache."""
    x = mlp.inputs(embedding, dirs)
    if x.shape[-1] != mlp.net.in_dim:
        raise StructureError(f"embedding has {embedding.shape[-1]} channels, MLP expects {mlp.embed_dim}")
    z, inputs = mlp.net.forward(x, keep=True)
    rgb = sigmoid(z[:, :3])
    sigma = softplus(z[:, 3])
    cache = (inputs, rgb, z[:, 3]) if keep else None
    return rgb, sigma, cache


class ShiftNetwork:
    """Per-timestep network ``g(p)``: a 3-D offset or ``3K`` encoding phases."""

    def __init__(self, mode, net, posenc_cfg):
        if mode not in (POSITION, ENCODING):
            raise StructureError(f"unknown shift mode {mode!r}")
        expected = 3 if mode == POSITION else 3 * posenc_cfg.n_freqs
        if net.out_dim != expected or net.in_dim != 3:
            raise StructureError(f"{mode} shift network must map 3 -> {expected}, got {net.in_dim} -> {net.out_dim}")
        self.mode = mode
        self.net = net
        self.posenc_cfg = posenc_cfg

    @classmethod
    def create(cls, mode, posenc_cfg, rng, hidden=32, dtype=np.float64):
        out = 3 if mode == POSITION else 3 * posenc_cfg.n_freqs
        return cls(mode, MLP.create([3, hidden, hidden, out], rng, dtype, zero_last=True), posenc_cfg)

    @property
    def out_dim(self):
        return self.net.out_dim

    @property
    def embed_dim(self):
        return self.posenc_cfg.dim

    def __call__(self, p):
        return self.net.forward(np.asarray(p))

    def params(self):
        return self.net.params()

    def copy(self):
        return ShiftNetwork(self.mode, self.net.copy(), self.posenc_cfg)

    def astype(self, dtype):
        return ShiftNetwork(self.mode, self.net.astype(dtype), self.posenc_cfg)


def apply_shift(p, shift, mode, cfg):
    """Embedding of points ``p`` given shift-network outputs ``shift``."""
    if mode == POSITION:
        if shift.shape[-1] != 3:
            raise StructureError("position shift must have 3 components")
        return posenc(p + shift, cfg)
    if mode == ENCODING:
        if shift.shape[-1] != 3 * cfg.n_freqs:
            raise StructureError(f"encoding shift must have {3 * cfg.n_freqs} components")
        return posenc(p, cfg, shift)
    raise StructureError(f"unknown shift mode {mode!r}")


def shift_embed(p, shiftnet):
    p = np.asarray(p, dtype=float)
    return apply_shift(p, shiftnet(p).astype(float), shiftnet.mode, shiftnet.posenc_cfg)


class TriPlane:
    """Three ``R x R x C`` feature planes over the cube ``[-1, 1]^3``.

    Plane order is XY, XZ, YZ. Within a plane, rows index the second
    coordinate and columns the first; grid nodes sit at ``-1 + 2 i / (R - 1)``.
    """

    PAIRS = ((0, 1), (0, 2), (1, 2))

    def __init__(self, planes):
        planes = np.asarray(planes)
        if planes.ndim != 4 or planes.shape[0] != 3 or planes.shape[1] != planes.shape[2]:
            raise StructureError(f"tri-plane array must be 3 x R x R x C, got {planes.shape}")
        self.planes = planes

    @classmethod
    def create(cls, resolution, channels, rng, scale=0.1, dtype=np.float64):
        planes = rng.uniform(-scale, scale, (3, resolution, resolution, channels))
        return cls(planes.astype(dtype))

    @property
    def resolution(self):
        return self.planes.shape[1]

    @property
    def channels(self):
        return self.planes.shape[3]

    @property
    def embed_dim(self):
        return 3 * self.channels

    def params(self):
        return {"planes": self.planes}

    def copy(self):
        return TriPlane(self.planes.copy())

    def astype(self, dtype):
        return TriPlane(self.planes.astype(dtype))


def triplane_corners(p, resolution):
    """Flat texel indices ``(3, P, 4)`` and bilinear weights ``(3, P, 4)``."""
    r = resolution
    f = (np.clip(np.asarray(p, dtype=float), -1.0, 1.0) + 1.0) * (0.5 * (r - 1))
    i0 = np.clip(np.floor(f), 0, r - 2).astype(np.int64)
    frac = f - i0
    idx, wts = [], []
    for a, b in TriPlane.PAIRS:
        u0, v0, fu, fv = i0[:, a], i0[:, b], frac[:, a], frac[:, b]
        base = v0 * r + u0
        idx.append(np.stack([base, base + 1, base + r, base + r + 1], axis=1))
        wts.append(np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=1))
    return np.stack(idx), np.stack(wts)


def interpolation_matrices(p, resolution, dtype=np.float64):
    """Sparse ``P x R^2`` bilinear interpolation operators, one per plane."""
    idx, wts = triplane_corners(p, resolution)
    n = idx.shape[1]
    indptr = np.arange(0, 4 * n + 1, 4)
    return [
        sparse.csr_matrix((wts[k].ravel().astype(dtype), idx[k].ravel(), indptr), shape=(n, resolution ** 2))
        for k in range(3)
    ]


def triplane_embed(p, tp, mats=None):
    """Concatenated bilinear samples (XY, XZ, YZ) at points ``p``; shape ``(P, 3C)``."""
    p = np.atleast_2d(p)
    if mats is None:
        mats = interpolation_matrices(p, tp.resolution, tp.planes.dtype)
    flat = tp.planes.reshape(3, -1, tp.channels)
    return np.concatenate([mats[k] @ flat[k] for k in range(3)], axis=1)


# Fields --------------------------------------------------------------------------


@dataclass
class RenderConfig:
    """Uniform quadrature over ``[near, far]``; density is zero outside ``|x|_inf <= bound``."""

    n_samples: int = 32
    near: float = 2.0
    far: float = 4.0
    background: tuple = (1.0, 1.0, 1.0)
    bound: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ParameterError("n_samples must be >= 1")
        if not self.near < self.far:
            raise ParameterError("near must be smaller than far")

    @property
    def step(self):
        return (self.far - self.near) / self.n_samples


class RadianceField:
    """Projection MLP plus one embedding (tri-plane or posenc shift network)."""

    def __init__(self, mlp, embedding, render=None, posenc_cfg=None):
        self.mlp = mlp
        self.embedding = embedding
        self.render = render or RenderConfig()
        self.posenc_cfg = posenc_cfg or getattr(embedding, "posenc_cfg", None) or PosEncConfig()
        if embedding.embed_dim != mlp.embed_dim:
            raise StructureError(
                f"embedding dimension {embedding.embed_dim} does not match MLP input {mlp.embed_dim}"
            )

    @property
    def variant(self):
        return "triplane" if isinstance(self.embedding, TriPlane) else self.embedding.mode

    def embed(self, points):
        if isinstance(self.embedding, TriPlane):
            return triplane_embed(points, self.embedding)
        return shift_embed(points, self.embedding)

    def query(self, points, dirs=None, t=None):
        rgb, sigma, _ = mlp_forward(self.mlp, self.embed(points), dirs)
        return rgb, sigma

    def params(self):
        out = {f"mlp.{k}": v for k, v in self.mlp.params().items()}
        out.update({f"embed.{k}": v for k, v in self.embedding.params().items()})
        return out


class TimeVaryingField:
    """Shared projection MLP with one embedding per timestep."""

    def __init__(self, mlp, embeddings, fps=30.0, render=None, posenc_cfg=None):
        if not embeddings:
            raise StructureError("need at least one embedding")
        kinds = {type(e) for e in embeddings}
        if len(kinds) != 1:
            raise StructureError("all embeddings must share one variant")
        first = embeddings[0]
        for e in embeddings:
            if isinstance(e, TriPlane) and e.planes.shape != first.planes.shape:
                raise StructureError("tri-planes differ in shape across timesteps")
            if isinstance(e, ShiftNetwork) and e.mode != first.mode:
                raise StructureError("shift networks differ in mode across timesteps")
        self.mlp = mlp
        self.embeddings = list(embeddings)
        self.fps = fps
        self.render = render or RenderConfig()
        self.posenc_cfg = posenc_cfg or getattr(first, "posenc_cfg", None) or PosEncConfig()

    def __len__(self):
        return len(self.embeddings)

    @property
    def variant(self):
        return self.at(0).variant

    def at(self, t):
        return RadianceField(self.mlp, self.embeddings[t], self.render, self.posenc_cfg)

    def query(self, points, dirs=None, t=0):
        return self.at(int(t)).query(points, dirs)


# Rendering -----------------------------------------------------------------------


def sample_points(origins, dirs, cfg, offsets=None):
    """Sample depths ``(R, N)``, points ``(R, N, 3)`` and the in-bound mask.

    Midpoints of ``N`` equal segments; ``offsets`` (one per ray, in units of
    the segment length, within [-0.5, 0.5)) jitter all samples of a ray.
    """
    n = cfg.n_samples
    depth = cfg.near + (np.arange(n) + 0.5) * cfg.step
    depth = np.broadcast_to(depth, (origins.shape[0], n))
    if offsets is not None:
        depth = depth + offsets[:, None] * cfg.step
    pts = origins[:, None, :] + depth[..., None] * dirs[:, None, :]
    inside = np.all(np.abs(pts) <= cfg.bound, axis=-1)
    return depth, pts, inside


def composite(rgb, sigma, cfg):
    """Emission-absorption compositing of ``(R, N, 3)`` colors and ``(R, N)`` densities.

    Returns color, opacity and the per-sample quantities needed by the
    backward pass: weights and transmittance after each sample.
    """
    tau = sigma * cfg.step
    cum = np.cumsum(tau, axis=1)
    trans_after = np.exp(-cum)
    # exclusive sum, not cum - tau, so an infinite density does not produce inf - inf
    before = np.concatenate([np.zeros_like(cum[:, :1]), cum[:, :-1]], axis=1)
    trans = np.exp(-before)
    weights = trans - trans_after
    opacity = weights.sum(axis=1)
    bg = np.asarray(cfg.background, dtype=rgb.dtype)
    color = np.einsum("rn,rnc->rc", weights, rgb) + (1.0 - opacity)[:, None] * bg
    return color, opacity, weights, trans_after


def render_rays(fld, origins, dirs, t=None, offsets=None, cfg=None):
    cfg = cfg or fld.render
    _, pts, inside = sample_points(origins, dirs, cfg, offsets)
    r, n = inside.shape
    rgb = np.zeros((r, n, 3))
    sigma = np.zeros((r, n))
    if inside.any():
        d = np.broadcast_to(dirs[:, None, :], pts.shape)[inside]
        c, s = fld.query(pts[inside], d, t)
        rgb[inside] = c
        sigma[inside] = s
    color, opacity, _, _ = composite(rgb, sigma, cfg)
    return color, opacity


def render_ray(fld, origin, direction, t=None):
    color, opacity = render_rays(fld, np.asarray(origin, float)[None], np.asarray(direction, float)[None], t)
    return color[0], opacity[0]


def render_image(fld, camera, t=None, chunk=8192, cfg=None):
    """``H x W x 3`` image; deterministic midpoint sampling."""
    o, d = generate_rays(camera)
    out = np.empty((o.shape[0], 3))
    for s in range(0, o.shape[0], chunk):
        out[s:s + chunk] = render_rays(fld, o[s:s + chunk], d[s:s + chunk], t, cfg=cfg)[0]
    return out.reshape(camera.height, camera.width, 3)
