import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lensfield.encoding import (
    FrustumGaussian,
    cone_gaussians,
    expected_component,
    frustum_moments,
    integrated_encode,
    integrated_positional_encode,
    positional_encode,
)
from lensfield.lens import CompositeCone, ConicalFrustum, LensConfig


class TestPositionalEncode:
    def test_origin(self):
        e = positional_encode(np.zeros(3), 2).reshape(2, 2, 3)
        assert np.all(e[:, 0] == 0) and np.all(e[:, 1] == 1)

    def test_pi(self):
        e = positional_encode(np.array([np.pi, 0, 0]), 1)
        assert abs(e[0]) < 1e-15 and e[3] == -1.0

    def test_layout(self):
        e = positional_encode(np.array([0.5, 0, 0]), 2)
        assert e.shape == (12,)
        assert e[[0, 3, 6, 9]] == pytest.approx([math.sin(0.5), math.cos(0.5), math.sin(1.0), math.cos(1.0)], abs=1e-15)
        assert e[[0, 3, 6, 9]] == pytest.approx([0.479426, 0.877583, 0.841471, 0.540302], abs=5e-7)

    def test_batched_and_bounded(self):
        x = np.random.default_rng(0).normal(size=(4, 5, 3)) * 10
        e = positional_encode(x, 6)
        assert e.shape == (4, 5, 36)
        assert np.all(np.abs(e) <= 1)

    def test_rejects_zero_freqs(self):
        with pytest.raises(ValueError):
            positional_encode(np.zeros(3), 0)


class TestExpectedComponent:
    def test_odd_symmetry(self):
        for k in range(5):
            assert expected_component(0.0, 0.3, k)[0] == 0.0

    def test_point_mass(self):
        s, c = expected_component(0.7, 0.0, 3)
        assert s == math.sin(8 * 0.7) and c == math.cos(8 * 0.7)

    def test_reference_value(self):
        s, _ = expected_component(1.0, 0.25, 0)
        assert s == pytest.approx(math.sin(1.0) * math.exp(-0.125), rel=1e-15)
        assert s == pytest.approx(0.742595, abs=1e-6)

    def test_reference_value_against_sampling(self):
        z = np.random.default_rng(1).standard_normal(100_000)
        mc = np.mean(np.sin(1.0 + 0.5 * z))
        assert expected_component(1.0, 0.25, 0)[0] == pytest.approx(mc, rel=1e-2)

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            expected_component(0.0, -1e-3, 0)

    @given(mu=st.floats(-5, 5), v1=st.floats(0, 2), dv=st.floats(0, 2), k=st.integers(0, 8))
    def test_attenuation_monotone_in_variance(self, mu, v1, dv, k):
        a = np.abs(expected_component(mu, v1, k))
        b = np.abs(expected_component(mu, v1 + dv, k))
        # same phase, so the ratio is the attenuation factor
        assert np.all(b <= a + 1e-15)

    @given(v=st.floats(1e-6, 2), k=st.integers(0, 7))
    def test_attenuation_monotone_in_frequency(self, v, k):
        att = lambda k: math.exp(-0.5 * 4.0**k * v)
        assert att(k + 1) <= att(k)
        s, c = expected_component(0.3, v, k)
        assert math.hypot(s, c) == pytest.approx(att(k), rel=1e-12)


class TestIntegratedEncode:
    def test_point_mass_equals_pe(self):
        rng = np.random.default_rng(0)
        mu = rng.uniform(-10, 10, size=(1000, 3))
        diff = integrated_encode(mu, np.zeros_like(mu), 16) - positional_encode(mu, 16)
        assert np.max(np.abs(diff)) < 1e-12

    def test_large_variance_vanishes(self):
        g = FrustumGaussian(np.array([0.3, -1.0, 2.0]), np.full(3, 100.0))
        assert np.max(np.abs(integrated_positional_encode(g, 16))) < 1e-20

    def test_single_precision_path(self):
        rng = np.random.default_rng(2)
        mu = rng.uniform(-6, 6, size=(2000, 3))
        var = rng.uniform(0, 1e-3, size=(2000, 3))
        a = integrated_encode(mu, var, 16)
        b = integrated_encode(mu, var, 16, dtype=np.float32)
        assert b.dtype == np.float32
        assert np.max(np.abs(a - b)) < 2e-6

    def test_matches_sampling(self):
        rng = np.random.default_rng(3)
        n = 100_000
        for _ in range(5):
            mu = rng.uniform(-2, 2, 3)
            var = rng.uniform(0, 0.05, 3)
            x = mu + np.sqrt(var) * rng.standard_normal((n, 3))
            mc = positional_encode(x, 6).mean(0)
            assert np.max(np.abs(integrated_encode(mu, var, 6) - mc)) < 1e-2

    def test_gaussian_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            FrustumGaussian(np.zeros(3), np.array([0.0, -1.0, 0.0]))


# -- frustum moments ----------------------------------------------------------


def axial_moments(edges, **kw):
    """Axial mean/variance and radial variance along a +z cone with identity frame."""
    mean, var = cone_gaussians(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, np.asarray(edges, float), **kw)
    return mean[0, 2], var[0, 2], var[0, 0]


def sample_solid(center, d, t0, t1, radius, n, rng):
    """Uniform points in a solid of revolution: axial position from the area
    profile by rejection, radius by the square-root rule."""
    tt = np.linspace(t0, t1, 1001)
    r2max = np.max(radius(tt) ** 2) * 1.0001
    ts = []
    while sum(len(x) for x in ts) < n:
        t = rng.uniform(t0, t1, 2 * n)
        ts.append(t[rng.random(2 * n) * r2max <= radius(t) ** 2])
    t = np.concatenate(ts)[:n]
    rho = radius(t) * np.sqrt(rng.random(n))
    phi = rng.uniform(0, 2 * np.pi, n)
    a = np.cross(d, [1.0, 0, 0] if abs(d[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(d, a)
    return center + t[:, None] * d + (rho * np.cos(phi))[:, None] * a + (rho * np.sin(phi))[:, None] * b


class TestFrustumMoments:
    def test_cylinder_limit(self):
        # a thin slice far from the apex is a cylinder of diameter 0.1*100
        z0, h = 100.0, 1e-3
        mz, vz, vr = axial_moments([z0, z0 + h], slope=0.1)
        # centroid of a cone slice: 3/4 (z1^4 - z0^4) / (z1^3 - z0^3)
        z1 = z0 + h
        assert mz == pytest.approx(0.75 * (z1**4 - z0**4) / (z1**3 - z0**3), abs=1e-9)
        assert mz == pytest.approx(z0 + h / 2, abs=1e-8)
        assert vz == pytest.approx(h * h / 12, rel=1e-4)
        assert vr == pytest.approx(10.0**2 / 16, rel=1e-4)

    def test_cone_from_apex(self):
        mz, _, _ = axial_moments([0.0, 2.0], slope=0.3)
        assert mz == pytest.approx(0.75 * 2.0, rel=1e-13)

    def test_bicone_apex_on_focal_plane(self):
        # radius A|l - z|/l vanishes at z = l, so the slice behind l is a cone
        mz, _, _ = axial_moments([1.0, 3.0], slope=0.0, aperture=0.2, focus=1.0)
        assert mz == pytest.approx(1.0 + 0.75 * 2.0, rel=1e-13)

    def test_piecewise_profile_against_sampling(self):
        # d(z) = 0.1 z + 0.1 (z - 1): 0.1 at z=1, 0.2 at z=1.5
        rng = np.random.default_rng(0)
        kw = dict(slope=0.1, aperture=0.1, focus=1.0)
        mz, vz, vr = axial_moments([1.0, 1.5], **kw)
        pts = sample_solid(np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, 1.5, lambda z: 0.5 * (0.2 * z - 0.1), 1_000_000, rng)
        assert mz == pytest.approx(pts[:, 2].mean(), abs=1e-3)
        assert vz == pytest.approx(pts[:, 2].var(), abs=1e-3)
        assert vr == pytest.approx(pts[:, 0].var(), abs=1e-3)
        assert vr == pytest.approx(pts[:, 1].var(), abs=1e-3)

    def test_kink_inside_frustum_against_sampling(self):
        rng = np.random.default_rng(1)
        lens = LensConfig(aperture=0.3, focal_length=0.1, focus_distance=2.0, pixel_diameter=3e-3)
        for _ in range(4):
            d = np.array([*rng.uniform(-0.3, 0.3, 2), -1.0])
            d /= np.linalg.norm(d)
            cone = CompositeCone(rng.uniform(-1, 1, 3), d, lens, 2.0, np.array([0.0, 0.0, -1.0]))
            fr = ConicalFrustum(cone, 1.8, 2.3)
            g = frustum_moments(fr)
            cos = cone.cos_theta
            radius = lambda t: 0.5 * np.asarray(cone.diameter_at(t * cos))
            pts = sample_solid(cone.lens_center, d, fr.t_near, fr.t_far, radius, 1_000_000, rng)
            assert np.max(np.abs(pts.mean(0) - g.mean)) < 1e-3
            assert np.max(np.abs(pts.var(0) - g.var)) < 1e-3

    def test_mean_inside_bounding_box(self):
        rng = np.random.default_rng(5)
        lens = LensConfig(aperture=0.1, focal_length=0.1, focus_distance=3.0, pixel_diameter=2e-3)
        d = np.array([0.2, -0.1, -1.0])
        d /= np.linalg.norm(d)
        cone = CompositeCone(np.zeros(3), d, lens, 1.0, np.array([0.0, 0.0, -1.0]))
        for z0 in rng.uniform(1.0, 5.0, 20):
            fr = ConicalFrustum(cone, z0, z0 + 0.3)
            g = frustum_moments(fr)
            corners = np.stack([cone.point_at(fr.z_near), cone.point_at(fr.z_far)])
            half = 0.5 * cone.diameter_at(fr.z_far)
            assert np.all(g.mean >= corners.min(0) - half) and np.all(g.mean <= corners.max(0) + half)
            assert np.all(g.var >= 0)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(4)
        centers = rng.normal(size=(5, 3))
        dirs = rng.normal(size=(5, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        edges = np.sort(rng.uniform(1, 5, size=(5, 9)), axis=1)
        cos = rng.uniform(0.8, 1.0, 5)
        mean, var = cone_gaussians(centers, dirs, cos, edges, 0.01, 0.05, 2.5)
        assert mean.shape == var.shape == (5, 8, 3)
        for i in range(5):
            m1, v1 = cone_gaussians(centers[i], dirs[i], cos[i], edges[i], 0.01, 0.05, 2.5)
            assert np.allclose(m1, mean[i], rtol=0, atol=1e-14) and np.allclose(v1, var[i], rtol=0, atol=1e-14)

    @given(z0=st.floats(0.1, 10), h=st.floats(1e-3, 3), slope=st.floats(1e-4, 0.1), A=st.floats(0, 0.5), l=st.floats(0.2, 10))
    @settings(max_examples=200)
    def test_axial_mean_within_slice(self, z0, h, slope, A, l):
        mz, vz, vr = axial_moments([z0, z0 + h], slope=slope, aperture=A, focus=l)
        assert z0 - 1e-9 <= mz <= z0 + h + 1e-9
        # a uniform slice maximises axial variance at h^2/4
        assert 0 <= vz <= h * h / 4 + 1e-12
        assert vr >= 0
