import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from magfield import io
from magfield.errors import InputError
from magfield.field import TimeVaryingField, orbit_camera, render_image
from magfield.magnify2d import FEATURE, FrameSequence
from magfield.magnify3d import LINEAR_TRIPLANE, magnify_triplane_linear
from magfield.temporal import BandpassSpec
from magfield.train import make_field


def tvf(variant, n=3, seed=0):
    rng = np.random.default_rng(seed)
    # float32 so the f32 checkpoint payload round-trips exactly
    base = make_field(variant, rng, resolution=8, channels=2, n_freqs=3, hidden=8, dtype=np.float32)
    embs = [base.embedding.copy() for _ in range(n)]
    for e in embs:
        for v in e.params().values():
            v += rng.normal(0, 0.05, v.shape).astype(np.float32)
    return TimeVaryingField(base.mlp, embs, 24.0, base.render, base.posenc_cfg)


class TestTensor:
    @given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip(self, tmp_path_factory, a):
        p = tmp_path_factory.mktemp("t") / "a.mag3"
        io.write_tensor(p, a)
        b = io.read_tensor(p)
        assert b.shape == a.shape and np.array_equal(a, b)

    def test_layout(self, tmp_path):
        p = tmp_path / "x.mag3"
        io.write_tensor(p, np.arange(6, dtype=float).reshape(2, 3))
        raw = p.read_bytes()
        assert raw[:4] == b"MAG3"
        assert struct.unpack_from("<II2Q", raw, 4) == (1, 2, 2, 3)
        assert np.frombuffer(raw[28:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]

    @pytest.mark.parametrize("data", [b"", b"NOPE" + bytes(20), b"MAG3" + struct.pack("<II", 7, 0),
                                      b"MAG3" + struct.pack("<IIQ", 1, 1, 4) + bytes(8)])
    def test_corrupt(self, tmp_path, data):
        p = tmp_path / "bad.mag3"
        p.write_bytes(data)
        with pytest.raises(InputError):
            io.read_tensor(p)


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["triplane", "position", "encoding"])
    def test_round_trip_renders_identically(self, tmp_path, variant):
        fld = tvf(variant)
        cams = [orbit_camera(10, 20, 3.0, size=6)]
        p = tmp_path / "f.ckpt"
        io.save_checkpoint(p, fld, cams, {"note": "x"})
        ck = io.load_checkpoint(p)
        assert len(ck.field) == 3 and ck.field.fps == 24.0 and ck.meta["note"] == "x"
        assert ck.cameras[0].to_dict() == cams[0].to_dict()
        for t in range(3):
            np.testing.assert_array_equal(render_image(ck.field, cams[0], t), render_image(fld, cams[0], t))

    def test_static_field(self, tmp_path):
        fld = tvf("triplane").at(0)
        io.save_checkpoint(tmp_path / "s.ckpt", fld)
        assert len(io.load_checkpoint(tmp_path / "s.ckpt").field) == 1

    def test_magnification_provenance(self, tmp_path):
        mag = magnify_triplane_linear(tvf("triplane", n=6), BandpassSpec(3, 5, 4))
        io.save_checkpoint(tmp_path / "m.ckpt", mag)
        back = io.load_checkpoint(tmp_path / "m.ckpt").field
        assert back.magnification.strategy == LINEAR_TRIPLANE
        assert back.magnification.spec.alpha == 4

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "t.mag3"
        io.write_tensor(p, np.zeros(3))
        with pytest.raises(InputError):
            io.load_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "f.ckpt"
        io.save_checkpoint(p, tvf("triplane"))
        p.write_bytes(p.read_bytes()[:-40])
        with pytest.raises(InputError):
            io.load_checkpoint(p)

    def test_missing_section(self, tmp_path):
        p = tmp_path / "f.ckpt"
        io.save_checkpoint(p, tvf("triplane"))
        header, data, start = io.read_header(p)
        header["timesteps"] = 5
        raw = json.dumps(header).encode()
        p.write_bytes(b"MAG3" + struct.pack("<II", 2, len(raw)) + raw + data[start:])
        with pytest.raises(InputError):
            io.load_checkpoint(p)


class TestFrames:
    def test_raw_round_trip(self, tmp_path, rng):
        seq = FrameSequence(rng.uniform(size=(4, 6, 5, 3)), 24.0)
        io.write_frames(tmp_path / "f", seq)
        back = io.read_frames(tmp_path / "f")
        assert back.fps == 24.0
        np.testing.assert_allclose(back.frames, seq.frames, atol=1e-7)
        assert sorted(p.name for p in (tmp_path / "f").glob("*.png"))[0] == "frame_0000.png"

    def test_png_only(self, tmp_path, rng):
        seq = FrameSequence(rng.uniform(size=(3, 6, 5, 3)), 30.0)
        io.write_frames(tmp_path / "f", seq, raw=False)
        back = io.read_frames(tmp_path / "f")
        np.testing.assert_allclose(back.frames, seq.frames, atol=0.5 / 255 + 1e-12)

    def test_feature_kind_kept(self, tmp_path, rng):
        seq = FrameSequence(rng.normal(size=(3, 4, 4, 2)) * 5, 30.0, FEATURE)
        io.write_frames(tmp_path / "f", seq)
        back = io.read_frames(tmp_path / "f")
        assert back.kind == FEATURE and np.allclose(back.frames, seq.frames, atol=1e-5)

    def test_gray_png(self, tmp_path):
        io.write_png(tmp_path / "g.png", np.full((3, 4, 1), 0.5))
        assert io.read_png(tmp_path / "g.png").shape == (3, 4, 1)

    def test_views(self, tmp_path, rng):
        seqs = [FrameSequence(rng.uniform(size=(2, 4, 4, 3)), 30.0) for _ in range(3)]
        io.write_views(tmp_path, seqs)
        back = io.read_views(tmp_path)
        assert len(back) == 3 and np.allclose(back[2].frames, seqs[2].frames, atol=1e-7)

    def test_missing(self, tmp_path):
        with pytest.raises(InputError):
            io.read_frames(tmp_path / "nope")
        (tmp_path / "empty").mkdir()
        with pytest.raises(InputError):
            io.read_frames(tmp_path / "empty")

    def test_unreadable_png(self, tmp_path):
        (tmp_path / "frame_0000.png").write_bytes(b"garbage")
        with pytest.raises(InputError):
            io.read_frames(tmp_path)


class TestCameras:
    def test_round_trip(self, tmp_path):
        cams = [orbit_camera(a, 15, 3.0, size=8) for a in (0, 90)]
        io.write_cameras(tmp_path / "c.json", cams)
        back = io.read_cameras(tmp_path / "c.json")
        for a, b in zip(cams, back):
            np.testing.assert_allclose(a.pose, b.pose)
            assert (a.fx, a.width) == (b.fx, b.width)

    def test_single_object_and_bare_list(self, tmp_path):
        d = orbit_camera(0, 0, 3.0, size=8).to_dict()
        (tmp_path / "one.json").write_text(json.dumps(d))
        (tmp_path / "list.json").write_text(json.dumps([d, d]))
        assert len(io.read_cameras(tmp_path / "one.json")) == 1
        assert len(io.read_cameras(tmp_path / "list.json")) == 2

    @pytest.mark.parametrize("text", ["{", json.dumps({"cameras": [{"fx": 1}]})])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "c.json").write_text(text)
        with pytest.raises(InputError):
            io.read_cameras(tmp_path / "c.json")
