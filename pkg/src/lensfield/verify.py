"""Independent numerical oracles for the rendering pipeline.

Each suite compares a closed-form or analytic code path against a brute
force estimate (Monte-Carlo sampling, finite differences, dense quadrature,
explicit ray sampling) and reports one :class:`Check` per comparison group.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import encoding, lens as lensmod
from .field import FieldArch, FieldParams, backward, forward
from .ptraining import loss_and_grad
from .render import camera_cones, render_cones, render_image
from .scene import AnalyticSceneField, Plane, Scene, oracle_image, rig_camera, thinlens_image


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.suite:<11} {self.name:<42} {self.value:10.3e}  (tol {self.tolerance:.1e}, {self.seconds:.1f}s)"


# -- IPE ----------------------------------------------------------------------


def ipe_monte_carlo(n_cases: int = 100, n_samples: int = 100_000, seed: int = 0):
    """Closed-form expected sin/cos vs stratified Monte-Carlo over Gaussian draws.

    Returns ``(max_abs_err, max_err_in_standard_errors)``.
    """
    rng = np.random.default_rng(seed)
    worst_abs = worst_se = 0.0
    for _ in range(n_cases):
        mu = rng.uniform(-3, 3)
        var = rng.uniform(0, 0.5) ** 2
        k = int(rng.integers(0, 9))
        # stratified standard-normal draws
        z = ndtri((np.arange(n_samples) + rng.random(n_samples)) / n_samples)
        x = mu + np.sqrt(var) * z
        for closed, samples in zip(encoding.expected_component(mu, var, k), (np.sin(2.0**k * x), np.cos(2.0**k * x))):
            est = samples.mean()
            se = samples.std(ddof=1) / np.sqrt(n_samples)
            err = abs(float(closed) - est)
            worst_abs = max(worst_abs, err)
            worst_se = max(worst_se, err / max(se, 1e-15))
    return worst_abs, worst_se


def suite_ipe(tol_scale: float = 1.0) -> list[Check]:
    t0 = time.perf_counter()
    err, n_se = ipe_monte_carlo()
    dt = time.perf_counter() - t0
    return [
        Check("ipe", "closed form vs MC (abs)", err < 1e-2 * tol_scale, err, 1e-2 * tol_scale, dt),
        Check("ipe", "closed form vs MC (standard errors)", n_se < 3.0 * tol_scale, n_se, 3.0 * tol_scale, dt),
    ]


# -- frustum moments --------------------------------------------------------


def random_frustum(rng) -> lensmod.ConicalFrustum:
    """A frustum with O(0.1) radius and axial length below 0.5."""
    lens = lensmod.LensConfig(
        aperture=rng.uniform(0, 0.3),
        focal_length=0.1,
        focus_distance=rng.uniform(1.0, 3.0),
        pixel_diameter=rng.uniform(0.5e-3, 4e-3),
    )
    fwd = np.array([0.0, 0.0, -1.0])
    d = fwd + 0.4 * rng.uniform(-1, 1, size=3) * np.array([1, 1, 0])
    d /= np.linalg.norm(d)
    origin = rng.uniform(-1, 1, size=3)
    cone = lensmod.CompositeCone(origin, d, lens, float(rng.uniform(1, 5)), fwd)
    z0 = rng.uniform(0.5, 3.0)
    return lensmod.ConicalFrustum(cone, z0, z0 + rng.uniform(0.05, 0.5))


def sample_frustum(frustum: lensmod.ConicalFrustum, n: int, rng) -> np.ndarray:
    """Uniform points inside the frustum by rejection from its bounding cylinder."""
    cone = frustum.cone
    t0, t1 = frustum.t_near, frustum.t_far
    zs = np.linspace(frustum.z_near, frustum.z_far, 257)
    r_max = 0.5 * np.max(cone.diameter_at(zs)) * 1.0001
    d = cone.axis_dir
    a = np.cross(d, [1.0, 0.0, 0.0] if abs(d[0]) < 0.9 else [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(d, a)
    out = []
    have = 0
    while have < n:
        m = int(1.5 * (n - have)) + 1000
        t = rng.uniform(t0, t1, m)
        x = rng.uniform(-r_max, r_max, m)
        y = rng.uniform(-r_max, r_max, m)
        r = 0.5 * np.asarray(cone.diameter_at(t * cone.cos_theta))
        keep = x * x + y * y <= r * r
        pts = cone.lens_center + t[keep, None] * d + x[keep, None] * a + y[keep, None] * b
        out.append(pts)
        have += pts.shape[0]
    return np.concatenate(out)[:n]


def moments_monte_carlo(n_cases: int = 100, n_samples: int = 1_000_000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        fr = random_frustum(rng)
        g = encoding.frustum_moments(fr)
        pts = sample_frustum(fr, n_samples, rng)
        worst = max(worst, np.abs(pts.mean(0) - g.mean).max(), np.abs(pts.var(0) - g.var).max())
    return float(worst)


def suite_moments(tol_scale: float = 1.0, n_cases: int = 100) -> list[Check]:
    t0 = time.perf_counter()
    err = moments_monte_carlo(n_cases)
    return [Check("moments", "frustum moments vs uniform sampling", err < 1e-3 * tol_scale, err, 1e-3 * tol_scale, time.perf_counter() - t0)]


# -- lens identities --------------------------------------------------------


def lens_identities(n_cases: int = 1000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    focal_err = 0.0
    a0_diff = 0.0
    min_slope = np.inf
    for _ in range(n_cases):
        lens = lensmod.LensConfig(
            rng.uniform(0, 0.5), rng.uniform(0.01, 1.0), rng.uniform(0.1, 10.0), rng.uniform(1e-4, 1e-2)
        )
        k = rng.uniform(1, 51)
        focal_err = max(focal_err, lensmod.coc_diameter_scene_point(lens, lens.focus_distance))
        z = rng.uniform(0.01, 20.0, 16)
        pin = lens.with_aperture(0.0)
        a0_diff = max(a0_diff, np.abs(lensmod.composite_diameter(pin, z, k) - lensmod.axis_cone_diameter(pin, z, k)).max())
        # derivative in A on a depth grid, by exact difference
        zg = np.linspace(0.05, 3 * lens.focus_distance, 64)
        d1 = lensmod.composite_diameter(lens, zg, k)
        d2 = lensmod.composite_diameter(lens.with_aperture(lens.aperture + 0.01), zg, k)
        min_slope = min(min_slope, float(np.min(d2 - d1)))
    return {"focal_plane_coc": focal_err, "a0_max_diff": a0_diff, "min_dd_dA": min_slope}


def suite_lens(tol_scale: float = 1.0) -> list[Check]:
    t0 = time.perf_counter()
    r = lens_identities()
    dt = time.perf_counter() - t0
    return [
        Check("lens", "CoC on focal plane == 0", r["focal_plane_coc"] == 0.0 and tol_scale > 0, r["focal_plane_coc"], 0.0, dt),
        Check("lens", "composite(A=0) == axis cone", r["a0_max_diff"] == 0.0 and tol_scale > 0, r["a0_max_diff"], 0.0, dt),
        Check("lens", "min d(diameter)/dA, must be >= 0", r["min_dd_dA"] >= 0.0 and tol_scale > 0, r["min_dd_dA"], 0.0, dt),
    ]


# -- volume rendering vs quadrature ---------------------------------------------


class BlobField:
    """Smooth closed-form density/radiance used to test the renderer alone."""

    def __init__(self, seed: int = 0, n_blobs: int = 4):
        rng = np.random.default_rng(seed)
        self.centers = np.column_stack([rng.uniform(-0.6, 0.6, n_blobs), rng.uniform(-0.6, 0.6, n_blobs), rng.uniform(-1.0, 1.5, n_blobs)])
        self.widths = rng.uniform(0.25, 0.5, n_blobs)
        self.peaks = rng.uniform(0.5, 3.0, n_blobs)
        self.freq = rng.uniform(1.0, 3.0, (3, 3))
        self.phase = rng.uniform(0, 2 * np.pi, 3)

    def density(self, x):
        d2 = np.sum((x[:, None, :] - self.centers) ** 2, -1)
        return np.sum(self.peaks * np.exp(-0.5 * d2 / self.widths**2), -1)

    def radiance(self, x):
        return 0.5 + 0.4 * np.sin(x @ self.freq + self.phase)

    def query(self, mean, var, viewdirs):
        mean = np.asarray(mean, dtype=np.float64)
        return self.density(mean), self.radiance(mean), None


def quadrature_color(fld, center, direction, t_near, t_far, n: int = 10_000) -> np.ndarray:
    """Midpoint-rule volume rendering integral along one axis."""
    dt = (t_far - t_near) / n
    t = t_near + (np.arange(n) + 0.5) * dt
    x = center + t[:, None] * direction
    sigma = fld.density(x)
    rgb = fld.radiance(x)
    tau = sigma * dt
    trans = np.exp(-(np.cumsum(tau) - tau))
    w = trans * -np.expm1(-tau)
    return w @ rgb


def quadrature_check(n_cones: int = 50, seed: int = 0, n_coarse: int = 64, n_fine: int = 64) -> float:
    rng = np.random.default_rng(seed)
    fld = BlobField(seed)
    cam = rig_camera(32)
    cols = rng.integers(0, 32, n_cones)
    rows = rng.integers(0, 32, n_cones)
    cones = camera_cones(cam, cols, rows, scale=float(rng.uniform(1, 7)))
    res = render_cones(fld, cones, cam.near, cam.far, n_coarse, n_fine)
    worst = 0.0
    for i in range(n_cones):
        ref = quadrature_color(fld, cones.centers[i], cones.dirs[i], cam.near / cones.cos_theta[i], cam.far / cones.cos_theta[i])
        worst = max(worst, float(np.abs(res.fine.comp.rgb[i] - ref).max()))
    return worst


def suite_quadrature(tol_scale: float = 1.0) -> list[Check]:
    t0 = time.perf_counter()
    err = quadrature_check()
    return [Check("quadrature", "composite vs 1e4-point quadrature", err < 1e-3 * tol_scale, err, 1e-3 * tol_scale, time.perf_counter() - t0)]


# -- gradients ----------------------------------------------------------------


def _rel_err(a, b, floor: float = 1e-7) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


TINY_ARCH = FieldArch(pos_freqs=4, dir_freqs=2, depth=2, width=8, skip=1)


def _tiny_params(seed: int) -> FieldParams:
    p = FieldParams.init(TINY_ARCH, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    for b in p.biases:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return p


def mlp_gradient_check(n_trials: int = 20, seed: int = 0, h: float = 1e-4) -> float:
    """Backward pass vs central differences of ``<adjoint, output>``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_trials):
        p = _tiny_params(seed + trial)
        n = 6
        pos = rng.uniform(-1, 1, (n, TINY_ARCH.pos_dim))
        dirs = rng.uniform(-1, 1, (n, TINY_ARCH.dir_dim))
        a_den = rng.normal(size=n)
        a_rgb = rng.normal(size=(n, 3))

        def objective():
            out, _ = forward(p, pos, dirs)
            return float(a_den @ out.density + np.sum(a_rgb * out.radiance))

        _, acts = forward(p, pos, dirs)
        grads = backward(p, acts, a_den, a_rgb)
        for arr, g in zip(p.arrays(), grads.arrays()):
            fd = np.empty_like(arr)
            for i in np.ndindex(arr.shape):
                old = arr[i]
                arr[i] = old + h
                fp = objective()
                arr[i] = old - h
                fm = objective()
                arr[i] = old
                fd[i] = (fp - fm) / (2 * h)
            worst = max(worst, _rel_err(g, fd))
    return worst


def loss_gradient_check(seed: int = 0, h: float = 1e-4, n_coarse: int = 8, n_fine: int = 8) -> float:
    """End-to-end loss gradient vs central differences with the fine partition frozen."""
    rng = np.random.default_rng(seed)
    p = _tiny_params(seed)
    cam = rig_camera(16)
    cones = camera_cones(cam, rng.integers(0, 16, 2), rng.integers(0, 16, 2), scale=3.0)
    target = rng.uniform(0, 1, (2, 3))
    args = (cones, target, cam.near, cam.far, n_coarse, n_fine, 0.1)
    res = loss_and_grad(p, *args)

    def objective():
        return loss_and_grad(p, *args, fine_edges=res.fine_edges, need_grad=False).loss

    worst = 0.0
    for arr, g in zip(p.arrays(), res.grads.arrays()):
        fd = np.empty_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            fp = objective()
            arr[i] = old - h
            fm = objective()
            arr[i] = old
            fd[i] = (fp - fm) / (2 * h)
        worst = max(worst, _rel_err(g, fd))
    return worst


def suite_gradients(tol_scale: float = 1.0) -> list[Check]:
    t0 = time.perf_counter()
    mlp = mlp_gradient_check()
    t1 = time.perf_counter()
    e2e = loss_gradient_check()
    t2 = time.perf_counter()
    return [
        Check("gradients", "MLP backward vs finite differences", mlp < 1e-4 * tol_scale, mlp, 1e-4 * tol_scale, t1 - t0),
        Check("gradients", "loss gradient vs finite differences", e2e < 1e-3 * tol_scale, e2e, 1e-3 * tol_scale, t2 - t1),
    ]


# -- thin-lens geometry -----------------------------------------------------------


def beam_extent_check(n_rays: int = 200_000, seed: int = 0) -> float:
    """Relative gap between the sampled beam radius and the composite diameter.

    Rays leave uniform points of the receptive circle on the sensor, pass
    through uniform points of the aperture and refocus on the focal plane;
    at several depths their farthest distance from the cone axis should be
    half the composite diameter.
    """
    rng = np.random.default_rng(seed)
    lens = lensmod.LensConfig(aperture=0.1, focal_length=0.1, focus_distance=2.0, pixel_diameter=2e-3)
    lp = lens.image_distance
    # pixel centre offset on the sensor (camera looks down -z; sensor at z=+l')
    pix = np.array([0.004, -0.002])

    def disk(radius, n):
        r = radius * np.sqrt(rng.random(n))
        phi = 2 * np.pi * rng.random(n)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi)])

    sensor = pix + disk(0.5 * lens.pixel_diameter, n_rays)
    aperture = disk(0.5 * lens.aperture, n_rays)
    # every sensor point images onto the focal plane through the lens centre
    focus_pt = -sensor * lens.focus_distance / lp
    axis_dir = np.array([-pix[0], -pix[1], -lp])
    worst = 0.0
    for z in (0.5, 1.0, 1.5, 2.5, 4.0, 6.0):
        s = z / lens.focus_distance
        xy = aperture + s * (focus_pt - aperture)
        center = axis_dir[:2] * (z / lp)
        radius = np.sqrt(np.sum((xy - center) ** 2, 1)).max()
        expected = 0.5 * lensmod.composite_diameter(lens, z)
        worst = max(worst, abs(radius - expected) / expected)
    return float(worst)


def defocus_render_check(size: int = 48, aperture: float = 0.2, focus: float = 2.0, n_lens_samples: int = 256):
    """Cone-rendered defocus of a prefiltered checker wall vs the lens oracle.

    Returns the mean absolute error of the rendering and of a sharp pinhole
    image, both against the Monte-Carlo thin-lens image.
    """
    wall = Scene((Plane(0.0, 0.2, (0.9, 0.8, 0.3), (0.1, 0.2, 0.5)),))
    cam = rig_camera(size, aperture=aperture, focus=focus)
    ref = thinlens_image(wall, cam, n_lens_samples)
    rendered = render_image(cam, AnalyticSceneField(wall, prefilter=True))
    return float(np.abs(rendered - ref).mean()), float(np.abs(oracle_image(wall, cam, 4) - ref).mean())


def suite_thinlens(tol_scale: float = 1.0) -> list[Check]:
    t0 = time.perf_counter()
    err = beam_extent_check()
    out = [Check("thinlens", "sampled beam radius vs composite diameter", err < 1e-2 * tol_scale, err, 1e-2 * tol_scale, time.perf_counter() - t0)]
    t0 = time.perf_counter()
    mae, sharp_mae = defocus_render_check()
    dt = time.perf_counter() - t0
    out.append(Check("thinlens", "rendered defocus vs lens oracle (MAE)", mae < 0.05 * tol_scale, mae, 0.05 * tol_scale, dt))
    ratio = mae / sharp_mae
    out.append(Check("thinlens", "defocus MAE / pinhole MAE", ratio < 0.5 * tol_scale, ratio, 0.5 * tol_scale, dt))
    return out


SUITES = {
    "ipe": suite_ipe,
    "moments": suite_moments,
    "lens": suite_lens,
    "quadrature": suite_quadrature,
    "gradients": suite_gradients,
    "thinlens": suite_thinlens,
}


def run(names=None, tol_scale: float = 1.0) -> list[Check]:
    names = list(SUITES) if not names else names
    out = []
    for name in names:
        out.extend(SUITES[name](tol_scale))
    return out
