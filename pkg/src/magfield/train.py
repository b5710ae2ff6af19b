"""Fitting radiance fields: analytic gradients, Adam, static training and
per-timestep embedding finetuning with a frozen projection MLP."""

import json
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ParameterError, StructureError, TrainingError
from .field import (
    ENCODING,
    POSITION,
    PosEncConfig,
    ProjectionMLP,
    RadianceField,
    RenderConfig,
    ShiftNetwork,
    TimeVaryingField,
    TriPlane,
    composite,
    generate_rays,
    mlp_forward,
    posenc_args,
    render_image,
    sample_points,
    sigmoid,
    interpolation_matrices,
    triplane_embed,
)


@dataclass
class TrainConfig:
    steps: int = 3000
    batch: int = 1024
    lr_embedding: float = 1e-2
    lr_mlp: float = 5e-4
    seed: int = 0
    jitter: bool = True
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ParameterError("steps and batch must be >= 1")
        if not (self.lr_embedding > 0 and self.lr_mlp > 0):
            raise ParameterError("learning rates must be positive")


def static_config(**kw):
    return TrainConfig(**kw)


def finetune_config(**kw):
    base = dict(steps=1000, batch=4096, lr_embedding=1e-3, jitter=False)
    base.update(kw)
    return TrainConfig(**base)


# Gradients -------------------------------------------------------------------------


def _embed_forward(fld, pts):
    emb = fld.embedding
    if isinstance(emb, TriPlane):
        mats = interpolation_matrices(pts, emb.resolution, emb.planes.dtype)
        return triplane_embed(pts, emb, mats), mats
    cfg = fld.posenc_cfg
    # encode in the network's dtype; sines and cosines are kept for the backward pass
    dtype = emb.net.weights[0].dtype
    pts = pts.astype(dtype, copy=False)
    shift, inputs = emb.net.forward(pts, keep=True)
    if emb.mode == POSITION:
        arg = posenc_args(pts + shift, cfg)
    else:
        arg = posenc_args(pts, cfg, shift)
    flat = arg.reshape(len(pts), -1).astype(dtype, copy=False)
    sin, cos = np.sin(flat), np.cos(flat)
    return np.concatenate([sin, cos], axis=1), (inputs, sin, cos)


def _embed_backward(fld, cache, d_emb):
    emb = fld.embedding
    if isinstance(emb, TriPlane):
        r, c = emb.resolution, emb.channels
        grad = np.empty_like(emb.planes)
        d_emb = d_emb.astype(emb.planes.dtype, copy=False)
        for k, mat in enumerate(cache):
            grad[k] = (mat.T @ d_emb[:, k * c:(k + 1) * c]).reshape(r, r, c)
        return {"planes": grad}
    inputs, sin, cos = cache
    n3 = sin.shape[1]
    d_arg = d_emb[:, :n3] * cos - d_emb[:, n3:] * sin
    if emb.mode == POSITION:
        d_shift = (d_arg.reshape(-1, fld.posenc_cfg.n_freqs, 3) * fld.posenc_cfg.omegas.astype(d_arg.dtype)[:, None]).sum(axis=1)
    else:
        d_shift = d_arg
    _, grads = emb.net.backward(inputs, d_shift.astype(emb.net.weights[0].dtype))
    return grads


def loss_and_grad(fld, origins, dirs, targets, offsets=None, wrt=("mlp", "embed")):
    """Mean over rays of the squared color error, and its analytic gradient.

    Gradients are returned in a dict keyed like ``fld.params()`` for the
    parameter groups listed in ``wrt``.
    """
    if len(origins) != len(targets):
        raise StructureError("rays and targets are not aligned")
    cfg = fld.render
    _, pts, inside = sample_points(origins, dirs, cfg, offsets)
    n_rays, n = inside.shape
    p_in = pts[inside]
    emb, ecache = _embed_forward(fld, p_in)
    rgb_in, sigma_in, (inputs, _, z_sigma) = mlp_forward(fld.mlp, emb, None, keep=True)

    rgb = np.zeros((n_rays, n, 3))
    sigma = np.zeros((n_rays, n))
    rgb[inside] = rgb_in
    sigma[inside] = sigma_in
    color, _, weights, trans_after = composite(rgb, sigma, cfg)
    resid = color - targets
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss ({loss}); max density {np.max(sigma_in, initial=0.0):.3g}")

    g_color = 2.0 * resid / n_rays
    bg = np.asarray(cfg.background)
    g_rgb = weights[..., None] * g_color[:, None, :]
    s = np.einsum("rc,rnc->rn", g_color, rgb - bg)
    ws = weights * s
    after = np.cumsum(ws[:, ::-1], axis=1)[:, ::-1] - ws
    g_sigma = cfg.step * (trans_after * s - after)

    g_out_rgb = g_rgb[inside] * rgb_in * (1.0 - rgb_in)
    g_out_sigma = g_sigma[inside] * sigmoid(z_sigma)
    g_out = np.concatenate([g_out_rgb, g_out_sigma[:, None]], axis=1).astype(fld.mlp.net.weights[0].dtype)

    want_mlp = "mlp" in wrt
    d_in, mlp_grads = fld.mlp.net.backward(inputs, g_out, want_params=want_mlp)
    grads = {f"mlp.{k}": v for k, v in mlp_grads.items()} if want_mlp else {}
    if "embed" in wrt:
        d_emb = d_in[:, : fld.mlp.embed_dim]
        grads.update({f"embed.{k}": v for k, v in _embed_backward(fld, ecache, d_emb).items()})
    return loss, grads


# Gradient checking -----------------------------------------------------------------


def _astype_field(fld, dtype):
    emb = fld.embedding.astype(dtype)
    return RadianceField(fld.mlp.astype(dtype), emb, fld.render, fld.posenc_cfg)


def _kink_signature(fld, origins, dirs):
    """Every discrete choice made by the forward pass (ReLU signs, bound mask)."""
    _, pts, inside = sample_points(origins, dirs, fld.render)
    p_in = pts[inside]
    parts = [inside.ravel()]
    emb = fld.embedding
    if isinstance(emb, ShiftNetwork):
        _, inputs = emb.net.forward(p_in, keep=True)
        parts.extend((x > 0).ravel() for x in inputs[1:])
    _, inputs = fld.mlp.net.forward(fld.embed(p_in), keep=True)
    parts.extend((x > 0).ravel() for x in inputs[1:])
    return np.concatenate(parts)


@dataclass
class GradCheckResult:
    name: str
    index: tuple
    analytic: float
    numeric: float
    error: float
    step: float

    @property
    def ok(self):
        return self.error < GRAD_RTOL


GRAD_RTOL = 1e-4


def grad_check(fld, origins, dirs, targets, per_group=12, h=1e-4, h_fallback=1e-6, floor=1e-6, seed=0):
    """Compare analytic gradients with central differences on sampled entries.

    Runs in float64. Differences at ``h`` and ``h/2`` are Richardson-combined
    so the ``h^2`` truncation term cancels; the encoding's top frequency makes
    that term visible at ``h = 1e-4`` otherwise. If a ReLU sign flips inside the ``+-h`` stencil the
    difference quotient straddles a kink and means nothing; those entries
    are retried with ``h_fallback``. The relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator so that
    round-off on vanishing gradients is not reported as a mismatch.
    """
    fld = _astype_field(fld, np.float64)
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grad(fld, origins, dirs, targets)
    params = fld.params()
    base_sig = _kink_signature(fld, origins, dirs)
    results = []
    for name in sorted(grads):
        p = params[name]
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_group, flat.size), replace=False)
        for j in picks:
            old = flat[j]
            numeric, used = None, h
            for step in (h, h_fallback):
                used = step
                vals, sigs = [], []
                for off in (step, -step, step / 2, -step / 2):
                    flat[j] = old + off
                    vals.append(loss_and_grad(fld, origins, dirs, targets, wrt=())[0])
                    sigs.append(_kink_signature(fld, origins, dirs))
                flat[j] = old
                d1 = (vals[0] - vals[1]) / (2 * step)
                d2 = (vals[2] - vals[3]) / step
                numeric = (4 * d2 - d1) / 3
                if all(np.array_equal(s, base_sig) for s in sigs):
                    break
            a = float(grads[name].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            results.append(GradCheckResult(name, np.unravel_index(j, p.shape), a, numeric, err, used))
    return results


# Optimizer -------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place to ``params``.

    ``lr`` is a float or a callable mapping a parameter name to its rate.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        rate = lr(name) if callable(lr) else lr
        p -= (rate * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


# Training loops --------------------------------------------------------------------


def make_field(variant, rng, resolution=64, channels=16, n_freqs=6, hidden=64, render=None, dtype=np.float64):
    """Freshly initialised field; ``variant`` is triplane, position or encoding."""
    pe = PosEncConfig(n_freqs)
    if variant == "triplane":
        emb = TriPlane.create(resolution, channels, rng, dtype=dtype)
    elif variant in (POSITION, ENCODING):
        emb = ShiftNetwork.create(variant, pe, rng, dtype=dtype)
    else:
        raise ParameterError(f"unknown field variant {variant!r}")
    mlp = ProjectionMLP.create(emb.embed_dim, rng, hidden=hidden, dtype=dtype)
    return RadianceField(mlp, emb, render or RenderConfig(), pe)


def ray_dataset(frames, cameras):
    """Stack all pixels of ``frames`` (V x H x W x 3) into rays and targets."""
    if len(frames) != len(cameras):
        raise StructureError(f"{len(frames)} frames but {len(cameras)} cameras")
    os_, ds, ts = [], [], []
    for img, cam in zip(frames, cameras):
        o, d = generate_rays(cam)
        if img.shape[:2] != (cam.height, cam.width):
            raise StructureError("frame size does not match camera")
        os_.append(o)
        ds.append(d)
        ts.append(np.asarray(img, dtype=float).reshape(-1, 3))
    return np.concatenate(os_), np.concatenate(ds), np.concatenate(ts)


def psnr_from_mse(mse):
    return float("inf") if mse <= 0 else float(-10.0 * np.log10(mse))


def _optimize(fld, rays, cfg, wrt, log=None, tag=""):
    origins, dirs, targets = rays
    rng = np.random.default_rng(cfg.seed)
    params = fld.params()
    state = AdamState()

    def lr(name):
        return cfg.lr_mlp if name.startswith("mlp.") else cfg.lr_embedding

    n = len(origins)
    full = cfg.batch >= n
    order = np.arange(n)
    pos = n
    start = time.perf_counter()
    loss = np.nan
    for step in range(1, cfg.steps + 1):
        if full:
            sel = order
        else:
            if pos + cfg.batch > n:
                order = rng.permutation(n)
                pos = 0
            sel = order[pos:pos + cfg.batch]
            pos += cfg.batch
        offsets = rng.uniform(-0.5, 0.5, len(sel)) if cfg.jitter else None
        loss, grads = loss_and_grad(fld, origins[sel], dirs[sel], targets[sel], offsets, wrt)
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at step {step}")
        adam_step(params, grads, state, lr)
        if log is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            rec = {"step": step, "loss": loss, "psnr": psnr_from_mse(loss / 3), "wall": time.perf_counter() - start}
            if tag:
                rec["stage"] = tag
            log.write(json.dumps(rec) + "\n")
    return loss


def evaluate_psnr(fld, frames, cameras, t=None):
    mse = np.mean([np.mean((render_image(fld, cam, t) - img) ** 2) for img, cam in zip(frames, cameras)])
    return psnr_from_mse(mse)


def train_static(frames, cameras, cfg=None, variant="triplane", log=None, **field_kw):
    """Jointly fit embedding and projection MLP to one multi-view snapshot.

    For the positional-encoding variants the shift network is present but
    stays at its zero-initialised output; only the MLP is trained.
    """
    cfg = cfg or TrainConfig()
    fld = make_field(variant, np.random.default_rng(cfg.seed), **field_kw)
    rays = ray_dataset(np.asarray(frames), cameras)
    wrt = ("mlp", "embed") if variant == "triplane" else ("mlp",)
    _optimize(fld, rays, cfg, wrt, log, "static")
    fld.train_psnr = evaluate_psnr(fld, frames, cameras)
    return fld


def finetune_timestep(fld, frames_t, cameras, cfg=None, log=None, tag="finetune"):
    """Optimise a copy of ``fld.embedding`` against ``frames_t``; MLP untouched.

    Returns the new embedding. ``fld.embedding`` is the initialisation
    (normally the previous timestep's embedding).
    """
    cfg = cfg or finetune_config()
    work = RadianceField(fld.mlp, fld.embedding.copy(), fld.render, fld.posenc_cfg)
    rays = ray_dataset(np.asarray(frames_t), cameras)
    _optimize(work, rays, cfg, ("embed",), log, tag)
    return work.embedding


def fit_sequence(frames, cameras, fps, static_cfg=None, tune_cfg=None, variant="triplane",
                 warm_start="previous", log=None, progress=None, static_field=None, **field_kw):
    """Static fit on timestep 0, then finetune one embedding per later timestep.

    ``frames`` is ``V x T x H x W x 3``. ``warm_start`` selects the
    initialisation of each finetune: the previous timestep or timestep 0.
    """
    if warm_start not in ("previous", "first"):
        raise ParameterError("warm_start must be 'previous' or 'first'")
    frames = np.asarray(frames)
    base = static_field or train_static(frames[:, 0], cameras, static_cfg, variant, log, **field_kw)
    embeddings = [base.embedding]
    for t in range(1, frames.shape[1]):
        init = embeddings[-1] if warm_start == "previous" else embeddings[0]
        start = RadianceField(base.mlp, init, base.render, base.posenc_cfg)
        embeddings.append(finetune_timestep(start, frames[:, t], cameras, tune_cfg, log, f"t{t}"))
        if progress:
            progress(t)
    tvf = TimeVaryingField(base.mlp, embeddings, fps, base.render, base.posenc_cfg)
    tvf.train_psnr = getattr(base, "train_psnr", None)
    return tvf
