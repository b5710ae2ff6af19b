import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magfield.errors import ParameterError, StructureError
from magfield.field import (
    ENCODING,
    MLP,
    POSITION,
    Camera,
    PosEncConfig,
    ProjectionMLP,
    RadianceField,
    RenderConfig,
    ShiftNetwork,
    TimeVaryingField,
    TriPlane,
    apply_shift,
    composite,
    generate_rays,
    look_at,
    mlp_forward,
    orbit_camera,
    posenc,
    render_image,
    render_ray,
    sample_points,
    shift_embed,
    triplane_embed,
)
from magfield.harness import AnalyticField, one_sphere_scene

PE = PosEncConfig(6)
coords = st.floats(-1, 1, allow_nan=False)
point = st.tuples(coords, coords, coords).map(np.array)


class ZeroField:
    render = RenderConfig(n_samples=16)

    def query(self, points, dirs=None, t=None):
        return np.full((len(points), 3), 0.3), np.zeros(len(points))


class TestCamera:
    def test_axis_aligned_center_ray(self):
        cam = Camera(10, 10, 2, 2, 4, 4, np.column_stack([np.eye(3), [0, 0, -3]]))
        o, d = generate_rays(cam)
        # pixel centres (1.5, 1.5) and (2.5, 2.5) straddle the principal point; their mean is the axis
        mid = d.reshape(4, 4, 3)[1:3, 1:3].reshape(-1, 3).sum(axis=0)
        np.testing.assert_allclose(mid / np.linalg.norm(mid), [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(o, np.broadcast_to([0, 0, -3], o.shape))

    def test_odd_size_center_pixel(self):
        cam = Camera(7, 7, 2.5, 2.5, 5, 5, np.column_stack([np.eye(3), np.zeros(3)]))
        _, d = generate_rays(cam)
        np.testing.assert_allclose(d[12], [0, 0, 1], atol=1e-12)

    def test_unit_directions(self):
        _, d = generate_rays(orbit_camera(33, 17, 3.0, 24, 50.0))
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)

    def test_corner_ray_matches_fov(self):
        size, fov = 32, 40.0
        cam = orbit_camera(0, 0, 3.0, size, fov)
        _, d = generate_rays(cam)
        forward = cam.pose[:, 2]
        f = 0.5 * size / np.tan(np.radians(fov) / 2)
        off = 0.5 * size - 0.5
        expected = np.arctan(np.hypot(off, off) / f)
        assert np.arccos(d[0] @ forward) == pytest.approx(expected, abs=1e-12)

    def test_look_at_points_camera_at_target(self):
        pose = look_at([3, 1, 2])
        fwd = pose[:, 2]
        np.testing.assert_allclose(fwd, -np.array([3, 1, 2]) / np.linalg.norm([3, 1, 2]), atol=1e-12)

    def test_validation(self):
        with pytest.raises(ParameterError):
            Camera(-1, 1, 0, 0, 4, 4, np.column_stack([np.eye(3), np.zeros(3)]))
        with pytest.raises(ParameterError):
            Camera(1, 1, 0, 0, 4, 4, np.column_stack([2 * np.eye(3), np.zeros(3)]))

    def test_dict_round_trip(self):
        cam = orbit_camera(10, 20)
        back = Camera.from_dict(cam.to_dict())
        assert back.fx == cam.fx and np.array_equal(back.pose, cam.pose)


class TestPosenc:
    def test_origin(self):
        e = posenc(np.zeros((1, 3)), PE)
        assert np.all(e[:, :18] == 0) and np.all(e[:, 18:] == 1)

    def test_quarter_phase_turns_sine_into_cosine(self, rng):
        p = rng.uniform(-1, 1, (5, 3))
        phases = np.zeros((5, 18))
        phases[:, 4] = np.pi / 2
        shifted, plain = posenc(p, PE, phases), posenc(p, PE)
        np.testing.assert_allclose(shifted[:, 4], plain[:, 18 + 4], atol=1e-12)

    def test_layout(self):
        p = np.array([[0.1, 0.2, 0.3]])
        e = posenc(p, PosEncConfig(2))
        expected_sin = [np.sin(np.pi * 0.1), np.sin(np.pi * 0.2), np.sin(np.pi * 0.3),
                        np.sin(2 * np.pi * 0.1), np.sin(2 * np.pi * 0.2), np.sin(2 * np.pi * 0.3)]
        np.testing.assert_allclose(e[0, :6], expected_sin, atol=1e-15)

    @given(point, st.tuples(*[st.floats(-0.1, 0.1)] * 3).map(np.array))
    def test_shift_equivalence(self, p, dp):
        phases = (PE.omegas[:, None] * dp[None, :]).reshape(1, -1)
        np.testing.assert_allclose(posenc((p + dp)[None], PE), posenc(p[None], PE, phases), atol=1e-12)


def constant_shiftnet(mode, value):
    net = MLP.create([3, 32, 32, 3 if mode == POSITION else 18], np.random.default_rng(0), zero_last=True)
    net.biases[-1][:] = value
    return ShiftNetwork(mode, net, PE)


class TestShiftEmbed:
    def test_zero_shift_is_static_encoding(self, rng):
        p = rng.uniform(-1, 1, (10, 3))
        for mode in (POSITION, ENCODING):
            net = ShiftNetwork.create(mode, PE, rng)
            np.testing.assert_array_equal(shift_embed(p, net), posenc(p, PE))

    def test_constant_position_equals_encoding(self, rng):
        dp = np.array([0.03, -0.05, 0.01])
        pos = constant_shiftnet(POSITION, dp)
        enc = constant_shiftnet(ENCODING, (PE.omegas[:, None] * dp).ravel())
        p = rng.uniform(-1, 1, (20, 3))
        np.testing.assert_allclose(shift_embed(p, pos), shift_embed(p, enc), atol=1e-12)

    def test_equal_weights_equal_embeddings(self, rng):
        a = ShiftNetwork.create(POSITION, PE, np.random.default_rng(3))
        a.net.weights[-1][:] = rng.normal(size=a.net.weights[-1].shape)
        b = a.copy()
        p = rng.uniform(-1, 1, (8, 3))
        assert np.array_equal(shift_embed(p, a), shift_embed(p, b))

    def test_dimension_mismatch(self):
        with pytest.raises(StructureError):
            apply_shift(np.zeros((2, 3)), np.zeros((2, 4)), ENCODING, PE)
        with pytest.raises(StructureError):
            ShiftNetwork(POSITION, MLP.create([3, 8, 18], np.random.default_rng(0)), PE)


class TestTriPlane:
    def test_node_returns_stored_features(self, rng):
        tp = TriPlane.create(5, 2, rng)
        # grid node i sits at -1 + 2 i / (R - 1)
        i, j, k = 1, 3, 4
        p = np.array([[-1 + 0.5 * i, -1 + 0.5 * j, -1 + 0.5 * k]])
        want = np.concatenate([tp.planes[0, j, i], tp.planes[1, k, i], tp.planes[2, k, j]])
        np.testing.assert_allclose(triplane_embed(p, tp)[0], want, atol=1e-12)

    def test_constant_planes(self, rng):
        tp = TriPlane(np.full((3, 6, 6, 4), 0.25))
        np.testing.assert_allclose(triplane_embed(rng.uniform(-1, 1, (30, 3)), tp), 0.25, atol=1e-12)

    def test_texel_centre_is_corner_average(self, rng):
        tp = TriPlane.create(5, 3, rng)
        p = np.array([[-0.75, -0.25, 0.25]])  # centre of texel (0,1) in x-y, etc.
        e = triplane_embed(p, tp)[0]
        manual = []
        for k, (a, b) in enumerate(TriPlane.PAIRS):
            u0 = int(np.floor((p[0, a] + 1) * 2))
            v0 = int(np.floor((p[0, b] + 1) * 2))
            manual.append(tp.planes[k, v0:v0 + 2, u0:u0 + 2].mean(axis=(0, 1)))
        np.testing.assert_allclose(e, np.concatenate(manual), atol=1e-12)

    def test_out_of_domain_clamps(self, rng):
        tp = TriPlane.create(4, 2, rng)
        np.testing.assert_allclose(triplane_embed(np.array([[3.0, -5.0, 1.5]]), tp),
                                   triplane_embed(np.array([[1.0, -1.0, 1.0]]), tp), atol=1e-12)

    @given(st.integers(0, 5), coords, coords, st.floats(0, 1))
    def test_edge_is_linear_interpolation(self, i, y, z, frac):
        # along x, a point on a texel edge interpolates the two edge endpoints linearly
        tp = TriPlane.create(7, 2, np.random.default_rng(i))
        h = 2.0 / 6
        x0 = -1 + i * h
        mid = triplane_embed(np.array([[x0 + frac * h, y, z]]), tp)
        a = triplane_embed(np.array([[x0, y, z]]), tp)
        b = triplane_embed(np.array([[x0 + h, y, z]]), tp)
        np.testing.assert_allclose(mid, (1 - frac) * a + frac * b, atol=1e-12)

    def test_shape_check(self):
        with pytest.raises(StructureError):
            TriPlane(np.zeros((2, 4, 4, 1)))


class TestMLP:
    def test_zero_weights(self):
        net = MLP([np.zeros((6, 4)), np.zeros((4, 4)), np.zeros((4, 4))], [np.zeros(4)] * 3)
        rgb, sigma, _ = mlp_forward(ProjectionMLP(net), np.ones((3, 6)))
        np.testing.assert_allclose(rgb, 0.5)
        np.testing.assert_allclose(sigma, np.log(2.0))

    def test_codomain(self, rng):
        mlp = ProjectionMLP.create(12, rng)
        for w in mlp.net.weights:
            w *= 20
        rgb, sigma, _ = mlp_forward(mlp, rng.normal(size=(500, 12)) * 10)
        assert np.all((rgb >= 0) & (rgb <= 1)) and np.all(sigma >= 0)

    def test_matches_hand_rolled_forward(self, rng):
        mlp = ProjectionMLP.create(12, rng)
        x = rng.normal(size=(7, 12))
        h = x
        for i, (w, b) in enumerate(zip(mlp.net.weights, mlp.net.biases)):
            z = np.einsum("ni,io->no", h, w) + b
            h = np.where(z > 0, z, 0) if i < 2 else z
        rgb, sigma, _ = mlp_forward(mlp, x)
        np.testing.assert_allclose(rgb, 1 / (1 + np.exp(-h[:, :3])), atol=1e-10)
        np.testing.assert_allclose(sigma, np.log1p(np.exp(h[:, 3])), atol=1e-10)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(StructureError):
            mlp_forward(ProjectionMLP.create(12, rng), np.zeros((2, 10)))

    def test_field_checks_dims(self, rng):
        with pytest.raises(StructureError):
            RadianceField(ProjectionMLP.create(12, rng), TriPlane.create(4, 2, rng))

    def test_direction_branch(self, rng):
        mlp = ProjectionMLP.create(6, rng, dir_freqs=2)
        rgb, _ = mlp(np.zeros((2, 6)), np.array([[0, 0, 1.0], [1.0, 0, 0]]))
        assert rgb.shape == (2, 3)
        with pytest.raises(StructureError):
            mlp(np.zeros((2, 6)))


class TestRendering:
    def test_closed_form_weights(self):
        cfg = RenderConfig(n_samples=2, near=0.0, far=1.0)
        _, _, w, _ = composite(np.zeros((1, 2, 3)), np.array([[1.0, 2.0]]), cfg)
        np.testing.assert_allclose(w[0], [1 - np.exp(-0.5), np.exp(-0.5) * (1 - np.exp(-1.0))], atol=1e-15)

    def test_empty_is_background(self):
        cfg = RenderConfig(background=(0.2, 0.4, 0.6))
        color, opacity, _, _ = composite(np.ones((3, 32, 3)), np.zeros((3, 32)), cfg)
        np.testing.assert_allclose(color, np.broadcast_to([0.2, 0.4, 0.6], (3, 3)))
        assert np.all(opacity == 0)

    def test_opaque_first_sample(self):
        rgb = np.zeros((1, 4, 3))
        rgb[0, 0] = [0.1, 0.7, 0.3]
        sigma = np.array([[np.inf, 5.0, 5.0, 5.0]])
        color, opacity, _, _ = composite(rgb, sigma, RenderConfig(n_samples=4))
        np.testing.assert_allclose(color[0], [0.1, 0.7, 0.3])
        assert opacity[0] == 1.0

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
    def test_weights_bounded(self, seed, n):
        rng = np.random.default_rng(seed)
        sigma = rng.exponential(5.0, (4, n)) * rng.integers(0, 2, (4, n))
        _, opacity, w, _ = composite(rng.uniform(size=(4, n, 3)), sigma, RenderConfig(n_samples=n))
        assert np.all(w >= -1e-9) and np.all(opacity <= 1 + 1e-9)

    def test_midpoints(self):
        cfg = RenderConfig(n_samples=4, near=2.0, far=4.0)
        depth, _, _ = sample_points(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), cfg)
        np.testing.assert_allclose(depth[0], [2.25, 2.75, 3.25, 3.75])

    def test_zero_density_image(self):
        img = render_image(ZeroField(), orbit_camera(0, 10, size=8))
        np.testing.assert_allclose(img, 1.0)

    def test_render_ray_matches_image(self):
        spec = one_sphere_scene(size=8, n_views=1)
        fld = AnalyticField(spec)
        cam = spec.cameras[0]
        img = render_image(fld, cam)
        o, d = generate_rays(cam)
        for k in (0, 27, 36, 63):
            assert np.array_equal(render_ray(fld, o[k], d[k])[0], img.reshape(-1, 3)[k])

    def test_matches_dense_ray_march(self):
        spec = one_sphere_scene(size=8, n_views=1)
        fld = AnalyticField(spec)
        img = render_image(fld, spec.cameras[0])
        dense = render_image(fld, spec.cameras[0], cfg=RenderConfig(n_samples=4096, near=2.0, far=4.0))
        assert np.mean(np.abs(img - dense)) < 1e-2

    def test_sample_count_convergence(self):
        spec = one_sphere_scene(size=8, n_views=1)
        fld = AnalyticField(spec)
        cam = spec.cameras[0]
        # a bound wider than [near, far] keeps the integrand smooth (no hard cut-off)
        imgs = {n: render_image(fld, cam, cfg=RenderConfig(n_samples=n, bound=10.0)) for n in (16, 32, 64, 128, 256)}
        diffs = [np.abs(imgs[n] - imgs[2 * n]).max() for n in (16, 32, 64, 128)]
        assert all(a > b for a, b in zip(diffs, diffs[1:]))

    def test_render_deterministic(self, rng):
        mlp = ProjectionMLP.create(12, rng)
        fld = RadianceField(mlp, TriPlane.create(8, 4, rng))
        cam = orbit_camera(20, 20, size=8)
        assert np.array_equal(render_image(fld, cam), render_image(fld, cam, chunk=7))


class TestTimeVarying:
    def test_variant_consistency(self, rng):
        mlp = ProjectionMLP.create(12, rng)
        with pytest.raises(StructureError):
            TimeVaryingField(mlp, [TriPlane.create(4, 4, rng), TriPlane.create(5, 4, rng)])
        with pytest.raises(StructureError):
            TimeVaryingField(mlp, [])

    def test_at_shares_mlp(self, rng):
        mlp = ProjectionMLP.create(12, rng)
        tvf = TimeVaryingField(mlp, [TriPlane.create(4, 4, rng) for _ in range(3)])
        assert tvf.at(2).mlp is mlp and len(tvf) == 3 and tvf.variant == "triplane"
