"""Analytic emissive scenes: a small ray tracer used as ground truth.

Primitives are spheres and axis-aligned (constant-``z``) checkered
rectangles. Shading is purely emissive, background is black.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .imageio import write_png
from .render import Camera

MANIFEST_VERSION = 1
_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    rgb: tuple
    # if set, colour blends towards this as the viewer looks along -view_axis
    rgb_alt: tuple | None = None
    view_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be > 0")
        _check_rgb(self.rgb)
        if self.rgb_alt is not None:
            _check_rgb(self.rgb_alt)

    def intersect(self, o, d):
        c = np.asarray(self.center, dtype=np.float64)
        oc = o - c
        a = np.sum(d * d, -1)
        b = np.sum(oc * d, -1)
        cc = np.sum(oc * oc, -1) - self.radius**2
        disc = b * b - a * cc
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        t = np.where(t0 > _EPS, t0, t1)
        return np.where((disc >= 0) & (t > _EPS), t, np.inf)

    def shade(self, p, d):
        base = np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), p.shape)
        if self.rgb_alt is None:
            return base.copy()
        dn = d / np.linalg.norm(d, axis=-1, keepdims=True)
        s = 0.5 * (1.0 - dn @ np.asarray(self.view_axis, dtype=np.float64))
        return (1.0 - s[..., None]) * base + s[..., None] * np.asarray(self.rgb_alt)

    def contains(self, p):
        c = np.asarray(self.center, dtype=np.float64)
        return np.sum((p - c) ** 2, -1) <= self.radius**2


@dataclass(frozen=True)
class Plane:
    """Checkered rectangle on the plane ``z = z``.

    Cell parity is ``floor(x/period) + floor(y/period)``; even cells take
    ``rgb_a``. Bounds default to an unbounded plane.
    """

    z: float
    period: float
    rgb_a: tuple
    rgb_b: tuple
    x_range: tuple = (-np.inf, np.inf)
    y_range: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("checker period must be > 0")
        _check_rgb(self.rgb_a)
        _check_rgb(self.rgb_b)

    def intersect(self, o, d):
        dz = d[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - o[..., 2]) / dz
        p = o + t[..., None] * d
        inside = self._inside(p)
        return np.where((np.abs(dz) > 0) & (t > _EPS) & inside, t, np.inf)

    def _inside(self, p):
        x, y = p[..., 0], p[..., 1]
        return (x >= self.x_range[0]) & (x <= self.x_range[1]) & (y >= self.y_range[0]) & (y <= self.y_range[1])

    def texture(self, x, y):
        parity = (np.floor(x / self.period) + np.floor(y / self.period)) % 2
        a = np.asarray(self.rgb_a, dtype=np.float64)
        b = np.asarray(self.rgb_b, dtype=np.float64)
        return np.where(parity[..., None] == 0, a, b)

    def texture_blurred(self, x, y, var_x, var_y):
        """Texture averaged under an axis-aligned Gaussian footprint.

        The checker is ``(1 + sq(x) sq(y)) / 2`` with ``sq`` a unit square
        wave, and a diagonal Gaussian factorises over the two axes, so each
        axis reduces to a sum of normal-CDF differences over nearby cells.
        """
        even = 0.5 * (1.0 + _blurred_square_wave(x, var_x, self.period) * _blurred_square_wave(y, var_y, self.period))
        a = np.asarray(self.rgb_a, dtype=np.float64)
        b = np.asarray(self.rgb_b, dtype=np.float64)
        return b + even[..., None] * (a - b)

    def shade(self, p, d):
        return self.texture(p[..., 0], p[..., 1])


def _blurred_square_wave(x, var, period, reach=6.0, max_cells=32):
    """E[sq(x + s Z)] for the +-1 wave that is +1 on even cells."""
    x = np.asarray(x, dtype=np.float64)
    sd = np.sqrt(np.asarray(var, dtype=np.float64))
    sharp = np.where(np.floor(x / period) % 2 == 0, 1.0, -1.0)
    out = sharp.copy()
    soft = sd > 0
    if not np.any(soft):
        return out
    xs, ss = x[soft], sd[soft]
    half = min(int(np.ceil(reach * ss.max() / period)) + 1, max_cells)
    n = np.floor(xs / period)[:, None] + np.arange(-half, half + 1)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    cdf = lambda e: special.ndtr((e - xs[:, None]) / ss[:, None])
    val = np.sum(sign * (cdf((n + 1) * period) - cdf(n * period)), axis=1)
    # footprints wider than the summation window have no contrast left
    out[soft] = np.where(reach * ss > max_cells * period, 0.0, val)
    return out


def _check_rgb(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape != (3,) or np.any(rgb < 0) or np.any(rgb > 1):
        raise ValueError(f"rgb must be three values in [0, 1], got {rgb}")


@dataclass(frozen=True)
class Scene:
    primitives: tuple = ()
    name: str = "custom"

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            entry = {"type": type(p).__name__.lower(), **asdict(p)}
            prims.append(_jsonable(entry))
        return {"name": self.name, "primitives": prims}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        prims = []
        for entry in data["primitives"]:
            entry = dict(entry)
            kind = entry.pop("type")
            entry = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
            if kind == "plane":
                entry = {k: (tuple(_unjson(x) for x in v) if k.endswith("_range") else v) for k, v in entry.items()}
                prims.append(Plane(**entry))
            elif kind == "sphere":
                prims.append(Sphere(**entry))
            else:
                raise ValueError(f"unknown primitive {kind!r}")
        return cls(tuple(prims), data.get("name", "custom"))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _unjson(v):
    return float(v) if isinstance(v, str) else v


# -- presets ----------------------------------------------------------------


def two_planes() -> Scene:
    """Warm checker card at depth 2 beside a cool checker wall at depth 4.

    Seen from the default frontal pose (eye at ``z = 4``) the card fills the
    left half of the frame and the wall the right half. The wall stops at the
    card's edge instead of continuing behind it: with a wall behind the card,
    a 4x64 field settles on a single opaque layer at the card depth, since
    the wall behind it then gets no gradient. Cells span about nine pixels at
    64x64 on both planes, and the palettes differ in mean colour so blurred
    views still separate the planes.
    """
    near = Plane(2.0, 0.2, (0.95, 0.7, 0.25), (0.7, 0.35, 0.1), (-1.6, 0.0), (-1.6, 1.6))
    far = Plane(0.0, 0.4, (0.3, 0.6, 0.9), (0.1, 0.25, 0.5), (0.0, 4.0), (-4.0, 4.0))
    return Scene((near, far), "two-planes")


def sphere_on_plane() -> Scene:
    wall = Plane(0.0, 0.4, (0.3, 0.6, 0.9), (0.1, 0.25, 0.5), (-4.0, 4.0), (-4.0, 4.0))
    ball = Sphere((0.0, 0.0, 1.2), 0.6, (0.9, 0.2, 0.2), rgb_alt=(0.2, 0.9, 0.3))
    return Scene((ball, wall), "sphere")


PRESETS = {"two-planes": two_planes, "sphere": sphere_on_plane}

# default rig shared by presets: eye 4 units from the origin, 40 degree FOV
RIG = {"radius": 4.0, "target": (0.0, 0.0, 0.0), "max_angle_deg": 20.0, "near": 1.0, "far": 6.0, "fov_deg": 40.0}


# -- tracing ----------------------------------------------------------------


def trace_rays(scene: Scene, origins, dirs, with_index: bool = False):
    """Nearest-hit emissive colour for each ray; misses are black."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    o, d = np.broadcast_arrays(o, d)
    best = np.full(d.shape[:-1], np.inf)
    which = np.full(d.shape[:-1], -1)
    for i, prim in enumerate(scene.primitives):
        t = prim.intersect(o, d)
        closer = t < best
        best = np.where(closer, t, best)
        which = np.where(closer, i, which)
    rgb = np.zeros(d.shape)
    for i, prim in enumerate(scene.primitives):
        m = which == i
        if np.any(m):
            p = o[m] + best[m][:, None] * d[m]
            rgb[m] = prim.shade(p, d[m])
    if with_index:
        return rgb, which
    return rgb


def trace_pinhole(scene: Scene, camera: Camera, px) -> np.ndarray:
    """Colour of the ray through the centre of pixel ``px = (col, row)``."""
    col, row = px
    d = camera.ray_dirs(col + 0.5, row + 0.5)
    return trace_rays(scene, camera.translation, d)


def oracle_image(scene: Scene, camera: Camera, supersample: int = 1, with_index: bool = False):
    """Pinhole image averaged over an ``s x s`` grid inside every pixel."""
    s = int(supersample)
    offs = (np.arange(s) + 0.5) / s
    rows, cols = np.mgrid[0 : camera.height, 0 : camera.width]
    acc = np.zeros((camera.height, camera.width, 3))
    for oy in offs:
        for ox in offs:
            d = camera.ray_dirs(cols + ox, rows + oy)
            acc += trace_rays(scene, camera.translation, d)
    img = acc / (s * s)
    if with_index:
        d = camera.ray_dirs(cols + 0.5, rows + 0.5)
        _, idx = trace_rays(scene, camera.translation, d, with_index=True)
        return img, idx
    return img


def _lens_rays(camera: Camera, u, v, n: int, rng):
    """Rays from uniform lens-disk points to the in-focus conjugate of ``(u, v)``."""
    lens = camera.lens
    chief = camera.ray_dirs(u, v)  # unit depth per unit length along z
    target = camera.translation + lens.focus_distance * chief
    r = 0.5 * lens.aperture * np.sqrt(rng.random(u.shape))
    phi = 2.0 * np.pi * rng.random(u.shape)
    local = np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros_like(r)], -1)
    origins = camera.translation + local @ camera.rotation.T
    return origins, target - origins


def trace_thinlens_reference(scene: Scene, camera: Camera, px, n_lens_samples: int = 256, seed: int = 0, pixel_area: bool = False) -> np.ndarray:
    """Monte-Carlo thin-lens colour of one pixel.

    Lens points are uniform on the aperture disk and every ray passes through
    the pixel's conjugate point on the focal plane ``z = l``. With
    ``pixel_area`` each sample also jitters within the pixel footprint.
    """
    if n_lens_samples < 1:
        raise ValueError("n_lens_samples must be >= 1")
    if camera.lens.aperture == 0 and not pixel_area:
        return trace_pinhole(scene, camera, px)
    rng = np.random.default_rng(seed)
    col, row = px
    if pixel_area:
        u = col + rng.random(n_lens_samples)
        v = row + rng.random(n_lens_samples)
    else:
        u = np.full(n_lens_samples, col + 0.5)
        v = np.full(n_lens_samples, row + 0.5)
    o, d = _lens_rays(camera, u, v, n_lens_samples, rng)
    return trace_rays(scene, o, d).mean(0)


def thinlens_image(scene: Scene, camera: Camera, n_lens_samples: int = 256, seed: int = 0) -> np.ndarray:
    """Thin-lens reference for every pixel, integrating over lens and pixel area."""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0 : camera.height, 0 : camera.width]
    acc = np.zeros((camera.height, camera.width, 3))
    for _ in range(n_lens_samples):
        u = cols + rng.random(cols.shape)
        v = rows + rng.random(rows.shape)
        o, d = _lens_rays(camera, u, v, 1, rng)
        acc += trace_rays(scene, o, d)
    return acc / n_lens_samples


# -- analytic field ---------------------------------------------------------


class AnalyticSceneField:
    """Volumetric stand-in for a scene, queried like a trained field.

    Every rectangle becomes a slab of ``thickness`` behind its surface (as
    seen from the query direction) with density ``sigma``; colour is the
    texture at the point where the viewing line crosses the surface, so a
    frustum centred on the pixel axis reproduces the pinhole hit exactly.
    Spheres are solid with their emissive colour.

    With ``prefilter`` the checker colour is averaged under the query
    Gaussian's lateral footprint instead of point-sampled, which turns cone
    width (pixel footprint plus defocus) into visible blur.
    """

    def __init__(self, scene: Scene, sigma: float = 1e4, thickness: float = 0.25, prefilter: bool = False):
        self.scene = scene
        self.sigma = sigma
        self.thickness = thickness
        self.prefilter = prefilter

    def query(self, mean, var, viewdirs):
        p = np.asarray(mean, dtype=np.float64)
        d = np.asarray(viewdirs, dtype=np.float64)
        dens = np.zeros(p.shape[0])
        rgb = np.zeros(p.shape)
        # earlier primitives win where slabs overlap
        for prim in reversed(self.scene.primitives):
            if isinstance(prim, Plane):
                dz = d[:, 2]
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = (p[:, 2] - prim.z) / dz
                # s >= 0 means the point lies past the surface along the view
                hit = p - s[:, None] * d
                depth_behind = np.abs(p[:, 2] - prim.z)
                m = (np.abs(dz) > 0) & (s >= 0) & (depth_behind <= self.thickness) & prim._inside(hit)
                dens[m] = self.sigma
                if self.prefilter:
                    v = np.asarray(var, dtype=np.float64)
                    rgb[m] = prim.texture_blurred(hit[m, 0], hit[m, 1], v[m, 0], v[m, 1])
                else:
                    rgb[m] = prim.texture(hit[m, 0], hit[m, 1])
            else:
                m = prim.contains(p)
                dens[m] = self.sigma
                rgb[m] = prim.shade(p[m], d[m])
        return dens, rgb, None


# -- datasets ---------------------------------------------------------------


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    return np.stack([right, true_up, back], axis=1)


def rig_camera(size: int, eye=None, rig: dict | None = None, aperture: float = 0.0, focus: float | None = None) -> Camera:
    rig = {**RIG, **(rig or {})}
    target = np.asarray(rig["target"], dtype=np.float64)
    if eye is None:
        eye = target + np.array([0.0, 0.0, rig["radius"]])
    focal_px = 0.5 * size / np.tan(np.radians(0.5 * rig["fov_deg"]))
    focus = rig["radius"] if focus is None else focus
    return Camera.create(
        look_at(eye, target), eye, size, size, focal_px, rig["near"], rig["far"], aperture=aperture, focus_distance=focus
    )


def arc_poses(n_views: int, seed: int, rig: dict | None = None) -> list[np.ndarray]:
    """Eye positions on a spherical cap around ``+z`` facing the target."""
    rig = {**RIG, **(rig or {})}
    rng = np.random.default_rng(seed)
    max_a = np.radians(rig["max_angle_deg"])
    eyes = []
    for _ in range(n_views):
        # uniform on the cap
        cos_a = 1.0 - rng.random() * (1.0 - np.cos(max_a))
        sin_a = np.sqrt(1.0 - cos_a * cos_a)
        phi = 2.0 * np.pi * rng.random()
        off = rig["radius"] * np.array([sin_a * np.cos(phi), sin_a * np.sin(phi), cos_a])
        eyes.append(np.asarray(rig["target"]) + off)
    return eyes


@dataclass
class DatasetManifest:
    root: Path
    scene: dict
    width: int
    height: int
    focal_px: float
    near: float
    far: float
    focal_length: float
    focus_distance: float
    supersample: int
    frames: list = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def cameras(self) -> list[Camera]:
        cams = []
        for fr in self.frames:
            R = np.asarray(fr["rotation"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(fr["translation"], dtype=np.float64)
            cams.append(
                Camera.create(R, t, self.width, self.height, self.focal_px, self.near, self.far,
                              focal_length=self.focal_length, focus_distance=self.focus_distance)
            )
        return cams

    def image_paths(self) -> list[Path]:
        return [self.root / fr["file"] for fr in self.frames]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "scene": self.scene,
            "intrinsics": {"width": self.width, "height": self.height, "focal_px": self.focal_px},
            "near": self.near,
            "far": self.far,
            "lens": {"focal_length": self.focal_length, "focus_distance": self.focus_distance},
            "supersample": self.supersample,
            "frames": self.frames,
        }

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text())
        if data.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {data.get('version')}")
        intr = data["intrinsics"]
        m = cls(
            path.parent, data["scene"], intr["width"], intr["height"], intr["focal_px"],
            data["near"], data["far"], data["lens"]["focal_length"], data["lens"]["focus_distance"],
            data["supersample"], data["frames"],
        )
        for p in m.image_paths():
            if not p.exists():
                raise FileNotFoundError(p)
        return m


def generate_dataset(scene: Scene, n_views: int, size: int, seed: int, out_dir, supersample: int = 4, rig: dict | None = None, prefix: str = "view") -> DatasetManifest:
    """Render ``n_views`` posed images of ``scene`` and write them with a manifest."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = {**RIG, **(rig or {})}
    frames = []
    cam = None
    for i, eye in enumerate(arc_poses(n_views, seed, rig)):
        cam = rig_camera(size, eye, rig)
        img = oracle_image(scene, cam, supersample)
        name = f"{prefix}_{i:03d}.png"
        write_png(out / name, img)
        frames.append({
            "file": name,
            "rotation": [float(x) for x in cam.rotation.ravel()],
            "translation": [float(x) for x in cam.translation],
        })
    manifest = DatasetManifest(
        out, scene.to_dict(), size, size, float(cam.focal_px), rig["near"], rig["far"],
        cam.lens.focal_length, cam.lens.focus_distance, supersample, frames,
    )
    manifest.save()
    return manifest
