import json

import numpy as np
import pytest

from lensfield.render import Camera
from lensfield.scene import (
    AnalyticSceneField,
    DatasetManifest,
    Plane,
    Scene,
    Sphere,
    arc_poses,
    generate_dataset,
    look_at,
    oracle_image,
    rig_camera,
    sphere_on_plane,
    thinlens_image,
    trace_pinhole,
    trace_rays,
    trace_thinlens_reference,
    two_planes,
)


def camera_at(z, size=32, focal=32.0, **kw):
    return Camera.create(np.eye(3), np.array([0.0, 0.0, z]), size, size, focal, 0.5, 20.0, **kw)


CHECKER = Scene((Plane(0.0, 0.5, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)),))


class TestPinhole:
    def test_miss_is_black(self):
        assert np.all(trace_pinhole(Scene(()), camera_at(3.0), (5, 5)) == 0)

    def test_red_sphere(self):
        sc = Scene((Sphere((0.0, 0.0, 0.0), 1.0, (1.0, 0.0, 0.0)),))
        assert np.allclose(trace_pinhole(sc, camera_at(5.0, size=33), (16, 16)), [1, 0, 0])

    def test_checker_parity(self):
        cam = camera_at(3.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            col, row = rng.integers(0, 32, 2)
            d = cam.ray_dirs(col + 0.5, row + 0.5)
            # ray from z=3 down to z=0
            hit = cam.translation + (3.0 / -d[2]) * d
            parity = (np.floor(hit[0] / 0.5) + np.floor(hit[1] / 0.5)) % 2
            expected = 1.0 if parity == 0 else 0.0
            assert trace_pinhole(CHECKER, cam, (col, row))[0] == expected

    def test_nearest_hit_wins(self):
        sc = two_planes()
        cam = rig_camera(64)
        img, idx = oracle_image(sc, cam, 1, with_index=True)
        assert np.all(idx[:, :28] == 0) and np.all(idx[:, 36:] == 1)

    def test_bounded_plane(self):
        p = Plane(0.0, 1.0, (1, 1, 1), (1, 1, 1), (0.0, 1.0), (0.0, 1.0))
        o = np.array([[0.5, 0.5, 1.0], [2.0, 0.5, 1.0]])
        d = np.array([[0.0, 0.0, -1.0]] * 2)
        t = p.intersect(o, d)
        assert t[0] == 1.0 and np.isinf(t[1])

    def test_invalid_primitives(self):
        with pytest.raises(ValueError):
            Sphere((0, 0, 0), 0.0, (1, 0, 0))
        with pytest.raises(ValueError):
            Plane(0.0, 1.0, (1.2, 0, 0), (0, 0, 0))

    def test_view_dependent_sphere(self):
        sc = sphere_on_plane()
        ball = sc.primitives[0]
        p = np.array([[0.0, 0.0, 1.8]])
        a = ball.shade(p, np.array([[0.0, 0.0, -1.0]]))
        b = ball.shade(p, np.array([[0.6, 0.0, -0.8]]))
        assert not np.allclose(a, b)

    def test_supersampling_averages(self):
        cam = camera_at(3.0, size=8, focal=8.0)
        one = oracle_image(CHECKER, cam, 1)
        four = oracle_image(CHECKER, cam, 4)
        assert one.shape == four.shape == (8, 8, 3)
        assert np.all((four >= 0) & (four <= 1))
        assert set(np.unique(one)) <= {0.0, 1.0}


class TestThinLens:
    def test_pinhole_limit_bitwise(self):
        sc = two_planes()
        cam = rig_camera(16)
        for px in [(0, 0), (7, 9), (15, 3)]:
            assert np.array_equal(trace_thinlens_reference(sc, cam, px, 64), trace_pinhole(sc, cam, px))

    def test_focal_plane_point(self):
        # wall at depth 3 in focus: all lens rays meet on it
        cam = camera_at(3.0, aperture=0.3, focus_distance=3.0)
        for px in [(3, 4), (20, 11)]:
            assert np.allclose(trace_thinlens_reference(CHECKER, cam, px, 256), trace_pinhole(CHECKER, cam, px), atol=1e-12)

    def test_contrast_drops_with_aperture(self):
        contrast = []
        for A in (0.0, 0.05, 0.1):
            cam = camera_at(3.0, size=32, focal=32.0, aperture=A, focus_distance=0.75)
            line = np.array([trace_thinlens_reference(CHECKER, cam, (c, 16), 256, seed=c)[0] for c in range(32)])
            contrast.append(line.max() - line.min())
        assert contrast[0] > contrast[1] > contrast[2]

    def test_variance_scales_inverse_with_samples(self):
        cam = camera_at(3.0, aperture=0.2, focus_distance=1.5)
        est = {n: np.array([trace_thinlens_reference(CHECKER, cam, (16, 16), n, seed=s)[0] for s in range(400)]) for n in (64, 256)}
        ratio = est[64].var() / est[256].var()
        assert 2.5 < ratio < 6.0

    def test_image_reference(self):
        cam = camera_at(3.0, size=8, focal=8.0)
        img = thinlens_image(CHECKER, cam, 1024)
        assert img.shape == (8, 8, 3)
        assert np.allclose(img, oracle_image(CHECKER, cam, 16), atol=0.1)

    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            trace_thinlens_reference(CHECKER, camera_at(3.0, aperture=0.1), (0, 0), 0)


class TestPoses:
    def test_look_at_is_rigid(self):
        for eye in arc_poses(30, 0):
            R = look_at(eye, (0, 0, 0))
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-12) and np.linalg.det(R) > 0
            assert np.allclose(-R[:, 2], -eye / np.linalg.norm(eye))

    def test_cap(self):
        eyes = np.array(arc_poses(200, 1))
        assert np.allclose(np.linalg.norm(eyes, axis=1), 4.0)
        ang = np.degrees(np.arccos(eyes[:, 2] / 4.0))
        assert ang.max() <= 20.0 + 1e-9

    def test_frontal_rig_depths(self):
        cam = rig_camera(64)
        assert np.allclose(cam.translation, [0, 0, 4])
        assert cam.focal_px == pytest.approx(32 / np.tan(np.radians(20)))


class TestDataset:
    def test_single_view(self, tmp_path):
        m = generate_dataset(two_planes(), 1, 8, 0, tmp_path)
        assert len(m.frames) == 1 and (tmp_path / "view_000.png").exists()
        data = json.loads((tmp_path / "manifest.json").read_text())
        assert len(data["frames"][0]["rotation"]) == 9 and len(data["frames"][0]["translation"]) == 3
        assert data["intrinsics"]["width"] == 8

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(two_planes(), 3, 8, 5, a)
        generate_dataset(two_planes(), 3, 8, 5, b)
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_round_trip(self, tmp_path):
        m = generate_dataset(two_planes(), 2, 8, 1, tmp_path)
        n = DatasetManifest.load(tmp_path)
        assert Scene.from_dict(n.scene) == two_planes()
        for c1, c2 in zip(m.cameras(), n.cameras()):
            assert np.allclose(c1.rotation, c2.rotation) and np.allclose(c1.translation, c2.translation)
            assert c1.focal_px == c2.focal_px and c1.lens == c2.lens

    def test_missing_image(self, tmp_path):
        generate_dataset(two_planes(), 2, 8, 1, tmp_path)
        (tmp_path / "view_001.png").unlink()
        with pytest.raises(FileNotFoundError):
            DatasetManifest.load(tmp_path)

    def test_zero_views(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(two_planes(), 0, 8, 1, tmp_path)


def test_trace_rays_broadcasts():
    o = np.zeros(3) + [0, 0, 3.0]
    d = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    rgb = trace_rays(CHECKER, o, d)
    assert rgb.shape == (2, 3) and np.all(rgb[1] == 0)


class TestBlurredTexture:
    plane = Plane(0.0, 0.5, (0.9, 0.2, 0.4), (0.1, 0.6, 0.3))

    def test_zero_variance_is_point_sample(self):
        xy = np.random.default_rng(0).uniform(-3, 3, (200, 2))
        zero = np.zeros(200)
        assert np.array_equal(self.plane.texture_blurred(xy[:, 0], xy[:, 1], zero, zero), self.plane.texture(xy[:, 0], xy[:, 1]))

    def test_against_sampling(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            x, y = rng.uniform(-2, 2, 2)
            vx, vy = rng.uniform(0.001, 0.2, 2)
            n = 200_000
            pts = np.array([x, y]) + np.sqrt([vx, vy]) * rng.standard_normal((n, 2))
            mc = self.plane.texture(pts[:, 0], pts[:, 1]).mean(0)
            got = self.plane.texture_blurred(np.array([x]), np.array([y]), np.array([vx]), np.array([vy]))[0]
            assert np.max(np.abs(got - mc)) < 5e-3

    def test_wide_footprint_is_mean_colour(self):
        got = self.plane.texture_blurred(np.array([0.3]), np.array([-1.1]), np.array([25.0]), np.array([25.0]))
        assert np.allclose(got, [0.5, 0.4, 0.35], atol=1e-9)

    def test_prefiltered_field_blurs_only_when_wide(self):
        fld = AnalyticSceneField(CHECKER, prefilter=True)
        p = np.array([[0.1, 0.1, -0.01]] * 2)
        d = np.array([[0.0, 0.0, -1.0]] * 2)
        var = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        _, rgb, _ = fld.query(p, var, d)
        assert np.allclose(rgb[0], 1.0) and np.allclose(rgb[1], 0.5, atol=1e-6)
