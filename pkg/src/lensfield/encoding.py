"""Positional encodings and Gaussian moments of conical frustums."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lens import ConicalFrustum

# 3-point Gauss-Legendre on [-1, 1]; exact for polynomials up to degree 5.
_GL_NODES = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GL_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@dataclass(frozen=True)
class FrustumGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))
        if np.any(self.var < 0):
            raise ValueError("variances must be non-negative")


def positional_encode(x, num_freqs: int) -> np.ndarray:
    """Sin/cos features of ``2**k * x`` for ``k = 0..num_freqs-1``.

    ``x`` has trailing dimension 3; the output has trailing dimension
    ``6 * num_freqs`` laid out as ``[sin(x), cos(x), sin(2x), cos(2x), ...]``
    where each block holds the three axes.
    """
    if num_freqs < 1:
        raise ValueError("num_freqs must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    scales = 2.0 ** np.arange(num_freqs)
    y = x[..., None, :] * scales[:, None]
    out = np.stack([np.sin(y), np.cos(y)], axis=-2)
    return out.reshape(*x.shape[:-1], 6 * num_freqs)


def expected_component(mu, var, k: int):
    """``(E[sin(2^k x)], E[cos(2^k x)])`` for ``x ~ N(mu, var)``."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("variance must be non-negative")
    scale = 2.0**k
    att = np.exp(-0.5 * scale * scale * var)
    arg = scale * np.asarray(mu, dtype=np.float64)
    return np.sin(arg) * att, np.cos(arg) * att


def integrated_encode(mean, var, num_freqs: int, dtype=np.float64) -> np.ndarray:
    """Expected positional encoding under a diagonal Gaussian (batched).

    With ``dtype=np.float32`` the phases are reduced modulo 2*pi in double
    precision before the single-precision sin/cos, which keeps the error
    around 1e-7 while running several times faster.
    """
    if num_freqs < 1:
        raise ValueError("num_freqs must be >= 1")
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    scales = 2.0 ** np.arange(num_freqs)
    y = mean[..., None, :] * scales[:, None]
    v = var[..., None, :] * (-0.5 * scales * scales)[:, None]
    if dtype != np.float64:
        y = (y - (2.0 * np.pi) * np.floor(y * (0.5 / np.pi))).astype(dtype)
        v = v.astype(dtype)
    # exp underflow to 0 is the intended low-pass limit
    att = np.exp(v)
    out = np.empty((*y.shape[:-1], 2, 3), dtype=y.dtype)
    np.multiply(np.sin(y), att, out=out[..., 0, :])
    np.multiply(np.cos(y), att, out=out[..., 1, :])
    return out.reshape(*mean.shape[:-1], 6 * num_freqs)


def integrated_positional_encode(g: FrustumGaussian, num_freqs: int) -> np.ndarray:
    return integrated_encode(g.mean, g.var, num_freqs)


def _piece_integrals(a, b, zc, slope, aperture, focus):
    """Integrals of r^2, (z-zc) r^2, (z-zc)^2 r^2 and r^4 over depth [a, b]."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    z = mid[..., None] + half[..., None] * _GL_NODES
    w = half[..., None] * _GL_WEIGHTS
    d = slope[..., None] * z + aperture[..., None] * np.abs(focus[..., None] - z) / focus[..., None]
    r2 = 0.25 * d * d
    u = z - zc[..., None]
    return (
        np.sum(w * r2, -1),
        np.sum(w * u * r2, -1),
        np.sum(w * u * u * r2, -1),
        np.sum(w * r2 * r2, -1),
    )


def cone_gaussians(centers, dirs, cos_theta, z_edges, slope, aperture=0.0, focus=1.0):
    """Mean and diagonal variance of every frustum between consecutive depths.

    Each frustum is treated as a uniform solid of revolution about the cone
    axis whose radius at depth ``z`` is half the composite diameter
    ``slope*z + A*|l - z|/l``. Moments are exact (the radius is piecewise
    linear, split at the focal plane) and the axial/radial covariance is
    projected onto the world axes, keeping only the diagonal.

    Shapes: ``centers``/``dirs`` ``(..., 3)``, ``cos_theta``/``slope``
    ``(...)``, ``z_edges`` ``(..., N+1)``. Returns ``(mean, var)`` of shape
    ``(..., N, 3)``.
    """
    z_edges = np.asarray(z_edges, dtype=np.float64)
    batch = z_edges.shape[:-1]
    z0 = z_edges[..., :-1]
    z1 = z_edges[..., 1:]
    bc = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float64), batch)[..., None]
    slope_, ap, fo, cos_ = bc(slope), bc(aperture), bc(focus), bc(cos_theta)
    slope_, ap, fo = (np.broadcast_to(v, z0.shape) for v in (slope_, ap, fo))

    # no kink without an aperture, so the focus setting cannot perturb rounding
    zk = np.where(ap > 0, np.clip(fo, z0, z1), z1)
    zc = 0.5 * (z0 + z1)
    p = _piece_integrals(z0, zk, zc, slope_, ap, fo)
    q = _piece_integrals(zk, z1, zc, slope_, ap, fo)
    i0, i1, i2, i4 = (x + y for x, y in zip(p, q))

    ok = i0 > 0
    safe = np.where(ok, i0, 1.0)
    du = np.where(ok, i1 / safe, 0.0)
    mean_z = zc + du
    var_z = np.maximum(np.where(ok, i2 / safe, 0.0) - du * du, 0.0)
    var_r = np.where(ok, i4 / (4.0 * safe), 0.0)

    mean_t = mean_z / cos_
    var_t = var_z / (cos_ * cos_)
    dirs = np.asarray(dirs, dtype=np.float64)[..., None, :]
    centers = np.asarray(centers, dtype=np.float64)[..., None, :]
    mean = centers + mean_t[..., None] * dirs
    dd = dirs * dirs
    var = var_t[..., None] * dd + var_r[..., None] * (1.0 - dd)
    return mean, var


def frustum_moments(frustum: ConicalFrustum) -> FrustumGaussian:
    """Centroid and per-axis variance of a uniform conical frustum (world frame)."""
    cone = frustum.cone
    if not frustum.z_far > frustum.z_near:
        raise ValueError("degenerate frustum")
    mean, var = cone_gaussians(
        cone.lens_center,
        cone.axis_dir,
        cone.cos_theta,
        np.array([frustum.z_near, frustum.z_far]),
        cone.slope,
        cone.lens.aperture,
        cone.lens.focus_distance,
    )
    return FrustumGaussian(mean[0], var[0])
