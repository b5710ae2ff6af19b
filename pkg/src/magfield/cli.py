"""Command-line interface: ``magfield <verb> ...``.

Exit codes: 0 success, 1 failed check (grad-check), 2 parameter error,
3 input/format error, 4 training divergence.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InputError, MagfieldError, ParameterError
from .field import RadianceField, TimeVaryingField, generate_rays, render_image
from .harness import SceneSpec, evaluate, gen_scene, xt_slice
from .magnify2d import linear_magnify, phase_magnify
from .magnify3d import STRATEGIES, MagnificationRequest, magnify, magnify_triplane_linear, magnify_triplane_phase
from .temporal import BandpassSpec
from .train import TrainConfig, finetune_config, finetune_timestep, grad_check, train_static


def _frames_at(directory, t):
    """Frame ``t`` of every view under ``directory`` (single-frame views give their only frame)."""
    views = io.read_views(directory)
    out = []
    for seq in views:
        if len(seq) == 1:
            out.append(seq.frames[0])
        elif 0 <= t < len(seq):
            out.append(seq.frames[t])
        else:
            raise ParameterError(f"frame {t} not available ({len(seq)} frames)")
    return np.stack(out)


def _cameras(ns_camera, ckpt):
    if ns_camera:
        return io.read_cameras(ns_camera)
    if not ckpt.cameras:
        raise ParameterError("checkpoint stores no cameras; pass --camera")
    return ckpt.cameras


def cmd_gen_scene(ns):
    spec = SceneSpec.from_dict(io.read_json(ns.spec))
    seqs = gen_scene(spec, ns.factor)
    out = Path(ns.outdir)
    io.write_views(out, seqs)
    io.write_cameras(out / "cameras.json", spec.cameras)
    (out / "scene.json").write_text(json.dumps({**spec.to_dict(), "factor": ns.factor}))
    print(f"wrote {len(seqs)} views x {spec.n_frames} frames to {out}")


def cmd_train(ns):
    cams = io.read_cameras(ns.cameras)
    frames = _frames_at(ns.frames, ns.t)
    cfg = TrainConfig(steps=ns.steps, batch=ns.batch, lr_embedding=ns.lr_embedding, lr_mlp=ns.lr_mlp, seed=ns.seed)
    log = open(ns.log, "w") if ns.log else None
    try:
        fld = train_static(frames, cams, cfg, ns.variant, log, resolution=ns.resolution, channels=ns.channels,
                           dtype=np.float32)
    finally:
        if log:
            log.close()
    io.save_checkpoint(ns.ckpt, TimeVaryingField(fld.mlp, [fld.embedding], ns.fps, fld.render, fld.posenc_cfg),
                       cams, {"train_psnr": fld.train_psnr})
    print(f"static PSNR {fld.train_psnr:.2f} dB -> {ns.ckpt}")


def cmd_finetune(ns):
    ck = io.load_checkpoint(ns.ckpt)
    tvf = ck.field
    if not 1 <= ns.t <= len(tvf):
        raise ParameterError(f"--t must lie in [1, {len(tvf)}] for a checkpoint with {len(tvf)} timesteps")
    cams = _cameras(ns.camera, ck)
    frames = _frames_at(ns.frames_t, ns.t)
    start = RadianceField(tvf.mlp, tvf.embeddings[ns.t - 1], tvf.render, tvf.posenc_cfg)
    cfg = finetune_config(steps=ns.steps, lr_embedding=ns.lr, seed=ns.seed)
    log = open(ns.log, "a") if ns.log else None
    try:
        emb = finetune_timestep(start, frames, cams, cfg, log, f"t{ns.t}")
    finally:
        if log:
            log.close()
    embs = tvf.embeddings[:ns.t] + [emb] + tvf.embeddings[ns.t + 1:]
    out = TimeVaryingField(tvf.mlp, embs, tvf.fps, tvf.render, tvf.posenc_cfg)
    out.train_psnr = tvf.train_psnr
    io.save_checkpoint(ns.out or ns.ckpt, out, ck.cameras)
    print(f"timestep {ns.t} finetuned ({len(out)} timesteps stored)")


def _spec(ns):
    return BandpassSpec(ns.flo, ns.fhi, ns.alpha)


def cmd_magnify_video(ns):
    spec = _spec(ns)
    views = io.read_views(ns.input, ns.fps)
    out = []
    for seq in views:
        if ns.method == "linear":
            out.append(linear_magnify(seq, spec, ns.mode, ns.depth))
        else:
            out.append(phase_magnify(seq, spec, ns.depth, ns.orientations))
    if io.view_dirs(ns.input) == [Path(ns.input)]:
        io.write_frames(ns.output, out[0])
    else:
        io.write_views(ns.output, out)
    print(f"magnified {len(out)} view(s) -> {ns.output}")


def cmd_magnify_field(ns):
    ck = io.load_checkpoint(ns.ckpt)
    req = MagnificationRequest(ns.strategy, _spec(ns), ns.depth, ns.orientations)
    cams = _cameras(ns.camera, ck)
    seqs = magnify(ck.field, req, cams)
    io.write_views(ns.output, seqs)
    if ns.save_field:
        if ns.strategy == "linear-triplane":
            mag = magnify_triplane_linear(ck.field, req.spec)
        elif ns.strategy == "phase-triplane":
            mag = magnify_triplane_phase(ck.field, req.spec, req.depth, req.orientations)
        else:
            raise ParameterError("--save-field applies to tri-plane strategies only")
        io.save_checkpoint(ns.save_field, mag, ck.cameras)
    print(f"rendered {len(seqs)} view(s) with {ns.strategy} -> {ns.output}")


def cmd_render(ns):
    ck = io.load_checkpoint(ns.ckpt)
    cams = _cameras(ns.camera, ck)
    if not 0 <= ns.view < len(cams):
        raise ParameterError(f"--view must lie in [0, {len(cams) - 1}]")
    if not 0 <= ns.t < len(ck.field):
        raise ParameterError(f"--t must lie in [0, {len(ck.field) - 1}]")
    img = render_image(ck.field, cams[ns.view], ns.t)
    io.write_png(ns.output, img)
    print(f"rendered t={ns.t} -> {ns.output}")


def cmd_slice(ns):
    seq = io.read_frames(ns.frames)
    img = xt_slice(seq, row=ns.row, col=ns.col)
    io.write_png(ns.output, img)
    print(f"slice {img.shape[0]}x{img.shape[1]} -> {ns.output}")


def cmd_metrics(ns):
    a, b = io.read_views(ns.a), io.read_views(ns.b)
    if len(a) != len(b):
        raise InputError(f"{len(a)} views vs {len(b)} views")
    reports = [evaluate(x, y, ns.region, tuple(ns.freqs)) for x, y in zip(a, b)]
    ssim = float(np.mean([r.mean_ssim for r in reports]))
    psnrs = [r.mean_psnr for r in reports]
    psnr = float("inf") if all(np.isinf(psnrs)) else float(np.mean([p for p in psnrs if np.isfinite(p)]))
    summary = {"mean_ssim": ssim, "mean_psnr": "inf" if np.isinf(psnr) else psnr,
               "views": [r.to_dict() for r in reports]}
    if ns.report:
        Path(ns.report).write_text(json.dumps(summary, indent=1))
    print(f"SSIM {ssim:.4f}  PSNR {psnr:.2f} dB")


def cmd_grad_check(ns):
    ck = io.load_checkpoint(ns.ckpt)
    if not 0 <= ns.t < len(ck.field):
        raise ParameterError(f"--t must lie in [0, {len(ck.field) - 1}]")
    fld = ck.field.at(ns.t)
    rng = np.random.default_rng(ns.seed)
    if ck.cameras:
        o, d = generate_rays(ck.cameras[0])
    else:
        from .field import orbit_camera

        o, d = generate_rays(orbit_camera(30.0, 20.0, 3.0, 16))
    sel = rng.choice(len(o), min(ns.rays, len(o)), replace=False)
    targets = rng.uniform(0.0, 1.0, (len(sel), 3))
    results = grad_check(fld, o[sel], d[sel], targets, per_group=ns.per_group, seed=ns.seed)
    bad = [r for r in results if not r.ok]
    worst = max(r.error for r in results)
    for r in bad:
        print(f"FAIL {r.name}{list(map(int, r.index))}: analytic {r.analytic:.6g} numeric {r.numeric:.6g}")
    print(f"checked {len(results)} entries, {len(bad)} failed, worst rel. error {worst:.2e}")
    return 1 if bad else 0


def _band_args(p):
    p.add_argument("--flo", type=float, required=True, help="lower band edge (Hz)")
    p.add_argument("--fhi", type=float, required=True, help="upper band edge (Hz)")
    p.add_argument("--alpha", type=float, required=True, help="gain; magnification factor is 1 + alpha")
    p.add_argument("--depth", type=int, default=None, help="pyramid depth")
    p.add_argument("--orientations", type=int, default=4)


def build_parser():
    parser = argparse.ArgumentParser(prog="magfield", description="Motion magnification in radiance fields.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-scene", help="render an analytic scene (ground truth at a factor)")
    p.add_argument("spec")
    p.add_argument("outdir")
    p.add_argument("--factor", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("train", help="fit a static field to one frame of every view")
    p.add_argument("frames")
    p.add_argument("cameras")
    p.add_argument("ckpt")
    p.add_argument("--t", type=int, default=0, help="frame index used for the static fit")
    p.add_argument("--variant", choices=("triplane", "position", "encoding"), default="triplane")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr-mlp", type=float, default=5e-4)
    p.add_argument("--lr-embedding", type=float, default=1e-2)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="line-delimited JSON training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fit the embedding of timestep t with the MLP frozen")
    p.add_argument("ckpt")
    p.add_argument("frames_t")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--camera", help="cameras JSON (default: cameras stored in the checkpoint)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write here instead of updating ckpt in place")
    p.add_argument("--log")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("magnify-video", help="2D Eulerian magnification of frame directories")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", choices=("linear", "phase"), required=True)
    p.add_argument("--mode", choices=("pixel", "laplacian"), default="pixel")
    p.add_argument("--fps", type=float, default=None)
    _band_args(p)
    p.set_defaults(func=cmd_magnify_video)

    p = sub.add_parser("magnify-field", help="magnify a time-varying field and render it")
    p.add_argument("ckpt")
    p.add_argument("output")
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--camera", help="cameras JSON (default: training cameras)")
    p.add_argument("--save-field", help="also store the magnified tri-plane field as a checkpoint")
    _band_args(p)
    p.set_defaults(func=cmd_magnify_field)

    p = sub.add_parser("render", help="render one timestep to a PNG")
    p.add_argument("ckpt")
    p.add_argument("output")
    p.add_argument("--camera")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--t", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("slice", help="space-time slice of a frame directory")
    p.add_argument("frames")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--row", type=int)
    g.add_argument("--col", type=int)
    p.add_argument("output")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("metrics", help="SSIM/PSNR (and displacement) between two frame sets")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--report")
    p.add_argument("--region", type=int, nargs=4, metavar=("Y0", "Y1", "X0", "X1"))
    p.add_argument("--freqs", type=float, nargs="*", default=[])
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("grad-check", help="finite-difference check of analytic gradients")
    p.add_argument("ckpt")
    p.add_argument("--t", type=int, default=0)
    p.add_argument("--rays", type=int, default=4)
    p.add_argument("--per-group", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns) or 0
    except MagfieldError as exc:
        print(f"magfield {ns.verb}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"magfield {ns.verb}: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
