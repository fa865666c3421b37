"""Synthetic scenes: anti-aliased rectangles and ellipses on a flat background."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage

from .errors import SpecError
from .geometry import OrientedBox, local_coords, to_corners
from .imagecore import GrayImage

SHAPES = ("rectangle", "ellipse")
ELLIPSE_VERTICES = 720


@dataclass(frozen=True)
class SceneObject:
    shape: str
    box: OrientedBox
    intensity: float


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int]
    objects: tuple[SceneObject, ...]
    background: float = 40.0
    noise_sigma: float = 0.0
    blur: str = "none"  # "none" or "box3"
    # "exact" clips each pixel square against the shape; "supersample" uses
    # an n x n grid of point samples per pixel.
    coverage: str = "exact"
    supersample: int = 4
    margin: float = field(default=2.0, repr=False)

    def validate(self) -> None:
        w, h = self.canvas
        if w < 3 or h < 3:
            raise SpecError(f"canvas {w}x{h} too small")
        if self.blur not in ("none", "box3"):
            raise SpecError(f"unknown blur {self.blur!r}")
        if self.coverage not in ("exact", "supersample"):
            raise SpecError(f"unknown coverage mode {self.coverage!r}")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be non-negative")
        for obj in self.objects:
            if obj.shape not in SHAPES:
                raise SpecError(f"unknown shape {obj.shape!r}")
            if abs(obj.intensity - self.background) < 20:
                raise SpecError("object intensity must differ from background by at least 20")
            if not (0 <= obj.intensity <= 255):
                raise SpecError("object intensity must lie in [0, 255]")
            xs, ys = _extent_points(obj).T
            lo = self.margin - 0.5
            if xs.min() < lo or ys.min() < lo or xs.max() > w - 0.5 - self.margin or ys.max() > h - 0.5 - self.margin:
                raise SpecError(f"object {obj.box} does not fit the canvas with a {self.margin}px margin")


def _extent_points(obj: SceneObject) -> np.ndarray:
    if obj.shape == "rectangle":
        return to_corners(obj.box)
    return _ellipse_outline(obj.box, 64)


def _ellipse_outline(box: OrientedBox, count: int) -> np.ndarray:
    t = np.linspace(0, 2 * math.pi, count, endpoint=False)
    u = 0.5 * box.w * np.cos(t)
    v = 0.5 * box.h * np.sin(t)
    c, s = math.cos(box.theta), math.sin(box.theta)
    return np.stack([box.cx + c * u - s * v, box.cy + s * u + c * v], axis=1)


def _polygon(obj: SceneObject):
    if obj.shape == "rectangle":
        return shapely.Polygon(to_corners(obj.box))
    return shapely.Polygon(_ellipse_outline(obj.box, ELLIPSE_VERTICES))


def coverage_exact(obj: SceneObject, canvas: tuple[int, int]) -> np.ndarray:
    """Fraction of each unit pixel square covered by the shape."""
    w, h = canvas
    poly = _polygon(obj)
    x0, y0, x1, y1 = poly.bounds
    cols = np.arange(max(0, math.floor(x0 + 0.5)), min(w, math.ceil(x1 + 0.5)))
    rows = np.arange(max(0, math.floor(y0 + 0.5)), min(h, math.ceil(y1 + 0.5)))
    cov = np.zeros((h, w))
    if not len(cols) or not len(rows):
        return cov
    gx, gy = np.meshgrid(cols, rows)
    cells = shapely.box(gx.ravel() - 0.5, gy.ravel() - 0.5, gx.ravel() + 0.5, gy.ravel() + 0.5)
    area = shapely.area(shapely.intersection(cells, poly)).reshape(gx.shape)
    cov[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = area
    return cov


def _inside(obj: SceneObject, xs, ys) -> np.ndarray:
    u, v = local_coords(obj.box, xs, ys)
    if obj.shape == "rectangle":
        return (np.abs(u) <= 0.5 * obj.box.w) & (np.abs(v) <= 0.5 * obj.box.h)
    return (u / (0.5 * obj.box.w)) ** 2 + (v / (0.5 * obj.box.h)) ** 2 <= 1.0


def coverage_supersampled(obj: SceneObject, canvas: tuple[int, int], n: int) -> np.ndarray:
    """Coverage estimated from an ``n x n`` grid of samples per pixel."""
    w, h = canvas
    offs = (np.arange(n) + 0.5) / n - 0.5
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cov = np.zeros((h, w))
    for oy in offs:
        for ox in offs:
            cov += _inside(obj, xs + ox, ys + oy)
    return cov / (n * n)


def render_scene(spec: SceneSpec, seed: int = 0) -> tuple[GrayImage, list[OrientedBox]]:
    """Rasterize ``spec``; returns the 8-bit image and the GT boxes in object order."""
    spec.validate()
    w, h = spec.canvas
    img = np.full((h, w), float(spec.background))
    for obj in spec.objects:
        if spec.coverage == "exact":
            cov = coverage_exact(obj, spec.canvas)
        else:
            cov = coverage_supersampled(obj, spec.canvas, spec.supersample)
        img = img * (1.0 - cov) + obj.intensity * cov
    if spec.blur == "box3":
        img = ndimage.uniform_filter(img, size=3, mode="nearest")
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    img = np.clip(np.rint(img), 0, 255)
    return GrayImage(img), [obj.box for obj in spec.objects]


def random_rect_scene(
    rng: np.random.Generator,
    canvas: tuple[int, int] = (128, 128),
    long_range: tuple[float, float] = (36.0, 64.0),
    aspect_range: tuple[float, float] = (1.6, 3.2),
    noise_sigma: float = 0.0,
    blur: str = "none",
) -> SceneSpec:
    """One rectangle of random size, angle and polarity near the canvas center."""
    w = rng.uniform(*long_range)
    h = w / rng.uniform(*aspect_range)
    theta = rng.uniform(-math.pi / 2, math.pi / 2)
    cx = canvas[0] / 2 + rng.uniform(-6, 6)
    cy = canvas[1] / 2 + rng.uniform(-6, 6)
    bg = rng.uniform(30, 90)
    fg = rng.uniform(150, 230)
    if rng.random() < 0.5:
        bg, fg = fg, bg
    box = OrientedBox.from_params(cx, cy, w, h, theta)
    return SceneSpec(canvas, (SceneObject("rectangle", box, fg),), background=bg, noise_sigma=noise_sigma, blur=blur)
