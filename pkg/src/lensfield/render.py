"""Composite-cone volume rendering."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoding import cone_gaussians, integrated_encode, positional_encode
from .field import FieldParams, backward, forward
from .lens import CompositeCone, LensConfig, receptive_diameter

MAX_FOV_DEG = 120.0


@dataclass(frozen=True)
class Camera:
    """Pinhole-at-lens-centre camera looking down its local -z axis.

    ``rotation``/``translation`` map camera coordinates to world coordinates.
    Pixel ``(col, row)`` has its centre at ``(col + 0.5, row + 0.5)``; image
    rows grow downwards, camera ``y`` points up.
    """

    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    focal_px: float
    near: float
    far: float
    lens: LensConfig

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal and right-handed")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1 or not self.focal_px > 0:
            raise ValueError("invalid intrinsics")
        half_diag = 0.5 * np.hypot(self.width, self.height)
        if 2 * np.degrees(np.arctan(half_diag / self.focal_px)) > MAX_FOV_DEG:
            raise ValueError(f"field of view exceeds {MAX_FOV_DEG} degrees")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def create(
        cls,
        rotation,
        translation,
        width: int,
        height: int,
        focal_px: float,
        near: float,
        far: float,
        aperture: float = 0.0,
        focal_length: float = 0.1,
        focus_distance: float = 3.0,
    ) -> "Camera":
        """Camera whose receptive diameter matches one pixel on a sensor at ``l'``."""
        l_img = focal_length * focus_distance / (focal_length + focus_distance)
        lens = LensConfig(
            aperture,
            focal_length,
            focus_distance,
            receptive_diameter(l_img, focal_px),
            l_img,
        )
        return cls(rotation, translation, width, height, focal_px, near, far, lens)

    def with_lens(self, aperture: float | None = None, focus: float | None = None) -> "Camera":
        lens = self.lens
        if aperture is not None:
            lens = lens.with_aperture(aperture)
        if focus is not None:
            lens = lens.with_focus(focus)
        return replace(self, lens=lens)

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[:, 2]

    def ray_dirs(self, u, v) -> np.ndarray:
        """World directions through continuous pixel coords, scaled to unit depth."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d_cam = np.stack(
            [(u - 0.5 * self.width) / self.focal_px, -(v - 0.5 * self.height) / self.focal_px, -np.ones_like(u)],
            axis=-1,
        )
        return d_cam @ self.rotation.T


@dataclass
class ConeBatch:
    """Flat arrays describing ``B`` composite cones."""

    centers: np.ndarray
    dirs: np.ndarray
    cos_theta: np.ndarray
    slope: np.ndarray
    aperture: float
    focus: float

    def __len__(self):
        return self.dirs.shape[0]

    def take(self, idx) -> "ConeBatch":
        return ConeBatch(self.centers[idx], self.dirs[idx], self.cos_theta[idx], self.slope[idx], self.aperture, self.focus)


def camera_cones(camera: Camera, cols, rows, scale: float = 1.0) -> ConeBatch:
    cols = np.asarray(cols)
    rows = np.asarray(rows)
    d = camera.ray_dirs(cols + 0.5, rows + 0.5).reshape(-1, 3)
    norm = np.linalg.norm(d, axis=-1)
    dirs = d / norm[:, None]
    n = dirs.shape[0]
    lens = camera.lens
    return ConeBatch(
        centers=np.broadcast_to(camera.translation, (n, 3)).copy(),
        dirs=dirs,
        cos_theta=1.0 / norm,
        slope=np.full(n, scale * lens.pixel_diameter / lens.image_distance),
        aperture=lens.aperture,
        focus=lens.focus_distance,
    )


def image_cones(camera: Camera, scale: float = 1.0) -> ConeBatch:
    """Cones for every pixel in row-major order."""
    rows, cols = np.mgrid[0 : camera.height, 0 : camera.width]
    return camera_cones(camera, cols.ravel(), rows.ravel(), scale)


def pixel_cone(camera: Camera, px, scale: float = 1.0) -> CompositeCone:
    """Composite cone of pixel ``px = (col, row)``."""
    col, row = px
    if not (0 <= col < camera.width and 0 <= row < camera.height):
        raise ValueError(f"pixel {px} outside {camera.width}x{camera.height} image")
    b = camera_cones(camera, [col], [row], scale)
    dirs = b.dirs[0]
    origin = camera.translation - (camera.lens.image_distance / b.cos_theta[0]) * dirs
    return CompositeCone(origin, dirs, camera.lens, scale, camera.forward)


# -- sampling ---------------------------------------------------------------


def stratified_depths(near, far, n: int, rng=None, batch_shape=()) -> np.ndarray:
    """``n + 1`` bin edges over ``[near, far]``.

    Without ``rng`` the edges are evenly spaced (frustum centres sit at the
    bin midpoints). With ``rng`` every edge is jittered inside its own
    stratum, so edges stay strictly increasing.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(near, far, n + 1)
    t = np.broadcast_to(t, (*batch_shape, n + 1)).copy()
    if rng is None:
        return t
    mids = 0.5 * (t[..., 1:] + t[..., :-1])
    upper = np.concatenate([mids, t[..., -1:]], -1)
    lower = np.concatenate([t[..., :1], mids], -1)
    return lower + (upper - lower) * rng.random(t.shape)


def _smooth_weights(w, floor):
    pad = np.concatenate([w[..., :1], w, w[..., -1:]], -1)
    wmax = np.maximum(pad[..., :-1], pad[..., 1:])
    return 0.5 * (wmax[..., :-1] + wmax[..., 1:]) + floor


def importance_depths(weights, edges, n: int, rng=None, floor: float = 0.0, smooth: bool = False) -> np.ndarray:
    """Draw ``n + 1`` sorted depths from the piecewise-constant PDF over ``edges``.

    ``weights`` has one entry per bin (``edges.shape[-1] - 1``). ``smooth``
    applies a two-tap max filter and ``floor`` adds a uniform floor before
    normalising. Rows whose weights are all zero fall back to uniform.
    Deterministic quantiles are used when ``rng`` is None.
    """
    w = np.asarray(weights, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if smooth:
        w = _smooth_weights(w, floor)
    elif floor:
        w = w + floor
    total = w.sum(-1, keepdims=True)
    w = np.where(total > 0, w, 1.0)
    total = w.sum(-1, keepdims=True)
    cdf = np.concatenate([np.zeros_like(total), np.cumsum(w, -1) / total], -1)
    cdf[..., -1] = 1.0

    m = n + 1
    if rng is None:
        u = (np.arange(m) + 0.5) / m
        u = np.broadcast_to(u, (*w.shape[:-1], m))
    else:
        u = (np.arange(m) + rng.random((*w.shape[:-1], m))) / m
    nbins = w.shape[-1]
    idx = np.sum(cdf[..., None, :] <= u[..., :, None], axis=-1) - 1
    idx = np.clip(idx, 0, nbins - 1)
    c0 = np.take_along_axis(cdf, idx, -1)
    c1 = np.take_along_axis(cdf, idx + 1, -1)
    e0 = np.take_along_axis(edges, idx, -1)
    e1 = np.take_along_axis(edges, idx + 1, -1)
    span = c1 - c0
    frac = np.where(span > 0, (u - c0) / np.where(span > 0, span, 1.0), 0.5)
    return e0 + np.clip(frac, 0.0, 1.0) * (e1 - e0)


# -- compositing ------------------------------------------------------------


@dataclass
class Composite:
    rgb: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray


def composite(sigma, rgb, deltas, depths=None, eps: float = 1e-10) -> Composite:
    """Alpha-composite samples along each cone onto a black background.

    ``sigma``/``deltas`` are ``(..., N)``, ``rgb`` ``(..., N, 3)``.
    Transmittance ``T_i`` accumulates only the samples before ``i``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    tau = sigma * deltas
    acc = np.cumsum(tau, -1)
    trans = np.exp(-np.concatenate([np.zeros_like(acc[..., :1]), acc[..., :-1]], -1))
    weights = trans * -np.expm1(-tau)
    color = np.sum(weights[..., None] * rgb, -2)
    opacity = weights.sum(-1)
    if depths is None:
        depth = np.zeros_like(opacity)
    else:
        depth = np.sum(weights * depths, -1) / np.maximum(opacity, eps)
    return Composite(color, depth, opacity, weights, trans)


def composite_backward(sigma, rgb, deltas, comp: Composite, d_color):
    """Adjoint of :func:`composite` colour w.r.t. ``sigma`` and ``rgb``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    d_color = np.asarray(d_color, dtype=np.float64)
    d_rgb = comp.weights[..., None] * d_color[..., None, :]
    gc = np.sum(rgb * d_color[..., None, :], -1)
    wgc = comp.weights * gc
    # sum over samples strictly after i
    after = np.cumsum(wgc[..., ::-1], -1)[..., ::-1] - wgc
    trans_next = comp.transmittance * np.exp(-sigma * deltas)
    d_sigma = deltas * (trans_next * gc - after)
    return d_sigma, d_rgb


# -- fields -----------------------------------------------------------------


class NeuralField:
    """Adapter that encodes frustum Gaussians and viewing directions for the MLP."""

    def __init__(self, params: FieldParams):
        self.params = params

    def query(self, mean, var, viewdirs, repeats: int = 1):
        """Density and radiance per Gaussian; ``viewdirs`` may be per cone with
        ``repeats`` consecutive Gaussians sharing each direction."""
        arch = self.params.arch
        dtype = self.params.weights[0].dtype
        pos = integrated_encode(mean, var, arch.pos_freqs, dtype=dtype)
        dirs = positional_encode(viewdirs, arch.dir_freqs).astype(dtype)
        if repeats > 1:
            dirs = np.repeat(dirs, repeats, axis=0)
        out, acts = forward(self.params, pos, dirs)
        return out.density, out.radiance, acts

    def backward(self, acts, d_sigma, d_rgb):
        return backward(self.params, acts, d_sigma, d_rgb)


def as_field(field):
    return NeuralField(field) if isinstance(field, FieldParams) else field


@dataclass
class PassResult:
    edges: np.ndarray
    sigma: np.ndarray
    rgb: np.ndarray
    deltas: np.ndarray
    comp: Composite
    acts: object = None


def render_pass(field, cones: ConeBatch, edges) -> PassResult:
    """Evaluate the field on every frustum between ``edges`` and composite."""
    field = as_field(field)
    b, n = edges.shape[0], edges.shape[1] - 1
    mean, var = cone_gaussians(
        cones.centers, cones.dirs, cones.cos_theta, edges, cones.slope, cones.aperture, cones.focus
    )
    if isinstance(field, NeuralField):
        sigma, rgb, acts = field.query(mean.reshape(-1, 3), var.reshape(-1, 3), cones.dirs, repeats=n)
    else:
        viewdirs = np.repeat(cones.dirs, n, axis=0)
        sigma, rgb, acts = field.query(mean.reshape(-1, 3), var.reshape(-1, 3), viewdirs)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(b, n)
    rgb = np.asarray(rgb, dtype=np.float64).reshape(b, n, 3)
    deltas = (edges[:, 1:] - edges[:, :-1]) / cones.cos_theta[:, None]
    z_mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    comp = composite(sigma, rgb, deltas, z_mid)
    return PassResult(edges, sigma, rgb, deltas, comp, acts)


@dataclass
class RenderResult:
    coarse: PassResult
    fine: PassResult

    @property
    def rgb(self) -> np.ndarray:
        return self.fine.comp.rgb


RESAMPLE_FLOOR = 0.01


def render_cones(field, cones: ConeBatch, near: float, far: float, n_coarse: int = 64, n_fine: int = 64, rng=None, fine_edges=None) -> RenderResult:
    """Coarse uniform pass, importance resampling, then the fine pass.

    ``rng=None`` is evaluation mode (no jitter). ``fine_edges`` pins the fine
    partition, which is how gradients are checked with sampling held fixed.
    """
    field = as_field(field)
    coarse_edges = stratified_depths(near, far, n_coarse, rng, (len(cones),))
    coarse = render_pass(field, cones, coarse_edges)
    if fine_edges is None:
        fine_edges = importance_depths(
            coarse.comp.weights, coarse_edges, n_fine, rng, floor=RESAMPLE_FLOOR, smooth=True
        )
    fine = render_pass(field, cones, fine_edges)
    return RenderResult(coarse, fine)


def render_pixel(camera: Camera, px, field, aperture=None, focus=None, scale: float = 1.0, n_coarse: int = 64, n_fine: int = 64, rng=None) -> RenderResult:
    cam = camera.with_lens(aperture, focus)
    col, row = px
    if not (0 <= col < cam.width and 0 <= row < cam.height):
        raise ValueError(f"pixel {px} outside image")
    cones = camera_cones(cam, [col], [row], scale)
    return render_cones(field, cones, cam.near, cam.far, n_coarse, n_fine, rng)


def render_image(camera: Camera, field, aperture=None, focus=None, scale: float = 1.0, n_coarse: int = 64, n_fine: int = 64, chunk: int = 2048, with_depth: bool = False):
    """Render every pixel in evaluation mode; returns an ``(H, W, 3)`` float image."""
    cam = camera.with_lens(aperture, focus)
    cones = image_cones(cam, scale)
    field = as_field(field)
    rgb = np.empty((len(cones), 3))
    depth = np.empty(len(cones))
    for s in range(0, len(cones), chunk):
        idx = slice(s, s + chunk)
        res = render_cones(field, cones.take(idx), cam.near, cam.far, n_coarse, n_fine)
        rgb[idx] = res.fine.comp.rgb
        depth[idx] = res.fine.comp.depth
    img = np.clip(rgb, 0.0, 1.0).reshape(cam.height, cam.width, 3)
    if with_depth:
        return img, depth.reshape(cam.height, cam.width)
    return img
