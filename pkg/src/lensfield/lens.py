"""Thin-lens geometry for a pixel's beam path.

All distances are measured along the optical axis (depth ``z``), positive in
front of the lens. The sensor sits at the image distance behind the lens.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


def image_distance(f: float, l: float) -> float:
    """Sensor distance that brings the plane at depth ``l`` into focus: ``f*l/(f+l)``."""
    if not f > 0:
        raise ValueError(f"focal length must be positive, got {f}")
    if not l > 0:
        raise ValueError(f"focus distance must be positive, got {l}")
    return f * l / (f + l)


@dataclass(frozen=True)
class LensConfig:
    """Thin lens with aperture ``A``, focal length ``f`` and focus distance ``l``.

    ``image_distance`` is fixed when the lens is built and is *not* updated by
    :meth:`with_focus`; refocusing only changes the defocus term.
    """

    aperture: float
    focal_length: float
    focus_distance: float
    pixel_diameter: float
    image_distance: float = 0.0

    def __post_init__(self):
        if self.aperture < 0:
            raise ValueError("aperture must be >= 0")
        if not self.focal_length > 0:
            raise ValueError("focal length must be > 0")
        if not self.focus_distance > 0:
            raise ValueError("focus distance must be > 0")
        if not self.pixel_diameter > 0:
            raise ValueError("pixel receptive diameter must be > 0")
        if self.image_distance == 0.0:
            object.__setattr__(
                self, "image_distance", image_distance(self.focal_length, self.focus_distance)
            )
        elif not self.image_distance > 0:
            raise ValueError("image distance must be > 0")

    def with_aperture(self, aperture: float) -> "LensConfig":
        return replace(self, aperture=float(aperture))

    def with_focus(self, focus_distance: float) -> "LensConfig":
        # image distance intentionally kept
        return replace(self, focus_distance=float(focus_distance))


def _check_depth(z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise ValueError("depths must be positive")
    return z


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def coc_diameter_scene_point(lens: LensConfig, z_e):
    """Circle-of-confusion diameter on the sensor for a scene point at depth ``z_e``."""
    z = _check_depth(z_e)
    A, f, l = lens.aperture, lens.focal_length, lens.focus_distance
    return _scalar_or_array(np.abs(A * f * (z - l) / (z * (f + l))))


def bicone_diameter(lens: LensConfig, z):
    """Cross-section diameter at depth ``z`` of the beam path of one sensor point.

    The bicone pinches to a point on the focal plane ``z = l``.
    """
    z = _check_depth(z)
    A, l = lens.aperture, lens.focus_distance
    return _scalar_or_array(np.abs(A * (l - z) / l))


def axis_cone_diameter(lens: LensConfig, z, k: float = 1.0):
    """Diameter at depth ``z`` of the cone swept by the pixel's chief rays.

    Equals ``k*d0*z/l'``; for a freshly built lens ``l' = f*l/(f+l)``.
    """
    z = _check_depth(z)
    if k < 1:
        raise ValueError("scale k must be >= 1")
    return _scalar_or_array(k * lens.pixel_diameter * z / lens.image_distance)


def composite_diameter(lens: LensConfig, z, k: float = 1.0):
    """Diameter of the composite cone at depth ``z``: axis cone plus bicone."""
    return _scalar_or_array(
        np.asarray(axis_cone_diameter(lens, z, k)) + np.asarray(bicone_diameter(lens, z))
    )


@dataclass(frozen=True)
class CompositeCone:
    """Beam path of one pixel.

    ``origin`` is the pixel centre on the sensor plane and ``axis_dir`` the
    unit direction from it through the lens centre. ``optical_axis`` is the
    camera's forward direction, needed to convert depths to axial distances.
    """

    origin: np.ndarray
    axis_dir: np.ndarray
    lens: LensConfig
    scale: float = 1.0
    optical_axis: np.ndarray = None

    def __post_init__(self):
        d = np.asarray(self.axis_dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("axis_dir must be a unit vector")
        if self.scale < 1:
            raise ValueError("scale k must be >= 1")
        fwd = d if self.optical_axis is None else np.asarray(self.optical_axis, dtype=np.float64)
        object.__setattr__(self, "axis_dir", d)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "optical_axis", fwd)

    @property
    def cos_theta(self) -> float:
        """Cosine between the cone axis and the optical axis."""
        return float(np.dot(self.axis_dir, self.optical_axis))

    @property
    def lens_center(self) -> np.ndarray:
        return self.origin + (self.lens.image_distance / self.cos_theta) * self.axis_dir

    def depth_to_axial(self, z):
        """Distance along the axis from the lens centre for depth ``z``."""
        return np.asarray(z, dtype=np.float64) / self.cos_theta

    def point_at(self, z) -> np.ndarray:
        t = self.depth_to_axial(z)
        return self.lens_center + np.multiply.outer(t, self.axis_dir)

    @property
    def slope(self) -> float:
        """Axis-cone diameter per unit depth, ``k*d0/l'``."""
        return self.scale * self.lens.pixel_diameter / self.lens.image_distance

    def diameter_at(self, z):
        return composite_diameter(self.lens, z, self.scale)


@dataclass(frozen=True)
class ConicalFrustum:
    cone: CompositeCone
    z_near: float
    z_far: float

    def __post_init__(self):
        if not 0 < self.z_near < self.z_far:
            raise ValueError(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")

    @property
    def t_near(self) -> float:
        return float(self.cone.depth_to_axial(self.z_near))

    @property
    def t_far(self) -> float:
        return float(self.cone.depth_to_axial(self.z_far))


def partition_cone(cone: CompositeCone, depths) -> list[ConicalFrustum]:
    """Slice ``cone`` at consecutive depths into ``len(depths) - 1`` frustums."""
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim != 1 or depths.size < 2:
        raise ValueError("need at least two depths")
    if np.any(np.diff(depths) <= 0):
        raise ValueError("depths must be strictly increasing")
    _check_depth(depths)
    return [
        ConicalFrustum(cone, float(a), float(b)) for a, b in zip(depths[:-1], depths[1:])
    ]


def receptive_diameter(image_dist: float, focal_px: float) -> float:
    """Default pixel receptive diameter: pixel pitch on the sensor scaled by 2/sqrt(3)."""
    return image_dist / focal_px * 2.0 / math.sqrt(3.0)
