"""File formats: raw tensors, field checkpoints, PNG frame directories, cameras.

Raw tensor (``.mag3``)::

    b"MAG3" | u32 version=1 | u32 ndims | u64 dims[ndims] | f32 payload (row-major)

Field checkpoint (``.ckpt``, same magic, version 2)::

    b"MAG3" | u32 version=2 | u32 header_len | JSON header | f32 blocks

The JSON header holds the render and encoding configs, the field variant,
fps, optional cameras, an optional ``magnified`` provenance record and a
``sections`` table of ``{name, shape, offset}`` (offset in floats from the
start of the block area). Section names are ``mlp.<i>.W`` / ``mlp.<i>.b``
and ``embed.<t>.planes`` or ``embed.<t>.<i>.W`` / ``embed.<t>.<i>.b``.
All integers and floats are little-endian; parameters are stored as f32.

Frame directories hold ``frame_0000.png ...`` (8-bit, values are linear
intensities written without any sRGB curve) and optionally ``frames.mag3``
with the exact float frames, which readers prefer when present. A
``sequence.json`` records fps and kind. Multi-view sets use ``view_00/``,
``view_01/`` ... subdirectories.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError, ParameterError
from .field import (
    MLP,
    Camera,
    PosEncConfig,
    ProjectionMLP,
    RadianceField,
    RenderConfig,
    ShiftNetwork,
    TimeVaryingField,
    TriPlane,
)
from .magnify2d import COLOR, FrameSequence

MAGIC = b"MAG3"
TENSOR_VERSION = 1
CHECKPOINT_VERSION = 2


# Raw tensors -----------------------------------------------------------------------


def write_tensor(path, array):
    a = np.array(array, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", TENSOR_VERSION, a.ndim))
        f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        f.write(a.tobytes())


def read_tensor(path):
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise InputError(f"{path}: not a MAG3 file")
    version, ndims = struct.unpack_from("<II", data, 4)
    if version != TENSOR_VERSION:
        raise InputError(f"{path}: expected tensor version {TENSOR_VERSION}, found {version}")
    if len(data) < 12 + 8 * ndims:
        raise InputError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndims}Q", data, 12)
    start = 12 + 8 * ndims
    count = int(np.prod(dims)) if ndims else 1
    if len(data) - start != 4 * count:
        raise InputError(f"{path}: payload has {len(data) - start} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=start).reshape(dims).astype(np.float32)


# Checkpoints -----------------------------------------------------------------------


@dataclass
class Checkpoint:
    field: TimeVaryingField
    cameras: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def static(self, t=0):
        return self.field.at(t)


def _as_sequence(fld):
    if isinstance(fld, RadianceField):
        return TimeVaryingField(fld.mlp, [fld.embedding], 30.0, fld.render, fld.posenc_cfg)
    return fld


def _embedding_blocks(t, emb):
    if isinstance(emb, TriPlane):
        return [(f"embed.{t}.planes", emb.planes)]
    return [(f"embed.{t}.{k}", v) for k, v in emb.net.params().items()]


def save_checkpoint(path, fld, cameras=(), meta=None):
    """Write a static or time-varying field; ``meta`` is merged into the header."""
    seq = _as_sequence(fld)
    first = seq.embeddings[0]
    header = {
        "variant": seq.variant,
        "fps": seq.fps,
        "render": asdict(seq.render),
        "posenc": {"n_freqs": seq.posenc_cfg.n_freqs},
        "mlp": {"dir_freqs": seq.mlp.dir_freqs, "layers": len(seq.mlp.net.weights)},
        "shift_layers": None if isinstance(first, TriPlane) else len(first.net.weights),
        "timesteps": len(seq),
        "cameras": [c.to_dict() for c in cameras],
        "train_psnr": _finite_or_none(getattr(fld, "train_psnr", None)),
    }
    req = getattr(seq, "magnification", None)
    if req is not None:
        header["magnified"] = req.to_dict()
    header.update(meta or {})
    blocks = [(f"mlp.{k}", v) for k, v in seq.mlp.params().items()]
    for t, emb in enumerate(seq.embeddings):
        blocks.extend(_embedding_blocks(t, emb))
    sections, offset = [], 0
    for name, arr in blocks:
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header["sections"] = sections
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        f.write(raw)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _finite_or_none(x):
    return float(x) if x is not None and np.isfinite(x) else None


def read_header(path):
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise InputError(f"{path}: not a MAG3 file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: expected checkpoint version {CHECKPOINT_VERSION}, found {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: corrupt header ({exc})") from None
    return header, data, 12 + hlen


def load_checkpoint(path):
    header, data, start = read_header(path)
    payload = np.frombuffer(data, dtype="<f4", offset=start)
    arrays = {}
    try:
        for sec in header["sections"]:
            n = int(np.prod(sec["shape"]))
            chunk = payload[sec["offset"]:sec["offset"] + n]
            if chunk.size != n:
                raise InputError(f"{path}: section {sec['name']} is truncated")
            arrays[sec["name"]] = chunk.reshape(sec["shape"]).astype(np.float32)
        mlp = ProjectionMLP(_net(arrays, "mlp", header["mlp"]["layers"]), header["mlp"]["dir_freqs"])
        pe = PosEncConfig(header["posenc"]["n_freqs"])
        r = header["render"]
        render = RenderConfig(r["n_samples"], r["near"], r["far"], tuple(r["background"]), r["bound"])
        embs = []
        for t in range(header["timesteps"]):
            if header["variant"] == "triplane":
                embs.append(TriPlane(arrays[f"embed.{t}.planes"]))
            else:
                embs.append(ShiftNetwork(header["variant"], _net(arrays, f"embed.{t}", header["shift_layers"]), pe))
    except KeyError as exc:
        raise InputError(f"{path}: missing checkpoint entry {exc}") from None
    tvf = TimeVaryingField(mlp, embs, header["fps"], render, pe)
    tvf.train_psnr = header.get("train_psnr")
    if header.get("magnified"):
        from .magnify3d import MagnificationRequest

        tvf.magnification = MagnificationRequest.from_dict(header["magnified"])
    cams = [Camera.from_dict(c) for c in header.get("cameras", [])]
    meta = {k: v for k, v in header.items() if k != "sections"}
    return Checkpoint(tvf, cams, meta)


def _net(arrays, prefix, layers):
    return MLP([arrays[f"{prefix}.{i}.W"] for i in range(layers)], [arrays[f"{prefix}.{i}.b"] for i in range(layers)])


# Frames ------------------------------------------------------------------------------


def write_frames(directory, seq, raw=True):
    """PNG frames (values clipped to [0, 1] for display) plus exact raw floats."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frames = seq.frames
    for t, img in enumerate(frames):
        write_png(d / f"frame_{t:04d}.png", img)
    if raw:
        write_tensor(d / "frames.mag3", frames)
    (d / "sequence.json").write_text(json.dumps({"fps": seq.fps, "kind": seq.kind, "frames": len(seq)}))


def write_png(path, img):
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


def read_png(path):
    try:
        with Image.open(path) as im:
            a = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=float) / 255.0
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    return a[..., None] if a.ndim == 2 else a


def read_frames(directory, fps=None):
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"{d} is not a frame directory")
    meta = {}
    if (d / "sequence.json").exists():
        meta = json.loads((d / "sequence.json").read_text())
    fps = fps or meta.get("fps", 30.0)
    kind = meta.get("kind", COLOR)
    if (d / "frames.mag3").exists():
        frames = read_tensor(d / "frames.mag3").astype(float)
    else:
        files = sorted(d.glob("frame_*.png"))
        if not files:
            raise InputError(f"{d} holds no frame_*.png files")
        frames = np.stack([read_png(f) for f in files])
    return FrameSequence(frames, fps, kind)


def view_dirs(directory):
    d = Path(directory)
    views = sorted(p for p in d.glob("view_*") if p.is_dir())
    return views or [d]


def write_views(directory, seqs, raw=True):
    for v, seq in enumerate(seqs):
        write_frames(Path(directory) / f"view_{v:02d}", seq, raw)


def read_views(directory, fps=None):
    """All views under ``directory``; a plain frame directory counts as one view."""
    return [read_frames(v, fps) for v in view_dirs(directory)]


# Cameras -----------------------------------------------------------------------------


def write_cameras(path, cameras):
    Path(path).write_text(json.dumps({"cameras": [c.to_dict() for c in cameras]}, indent=1))


def read_cameras(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read cameras from {path}: {exc}") from None
    if isinstance(data, dict) and "cameras" in data:
        data = data["cameras"]
    if isinstance(data, dict):
        data = [data]
    try:
        return [Camera.from_dict(c) for c in data]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise InputError(f"{path}: malformed camera entry ({exc})") from None


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
