"""Canny edges with adaptive thresholds, the sigmoid-compressed edge mask and its max-pool pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .errors import DimensionError
from .imagecore import GrayImage, VectorField, max_pool_2x2, sobel_gradients

PYRAMID_LEVELS = 5


@dataclass(frozen=True)
class CannyConfig:
    high_init: float = 80.0
    low_init: float = 40.0
    decay: float = 0.7
    density_target: float = 0.05
    floor: float = 1.0

    def __post_init__(self):
        if not (self.high_init > self.low_init > 0):
            raise ValueError("CannyConfig needs high_init > low_init > 0")
        if not (0 < self.decay < 1):
            raise ValueError("CannyConfig.decay must lie in (0, 1)")
        if not (0 < self.density_target < 1):
            raise ValueError("CannyConfig.density_target must lie in (0, 1)")
        if self.floor <= 0:
            raise ValueError("CannyConfig.floor must be positive")

    def max_passes(self) -> int:
        """Exact pass count when the density target is never met."""
        k = 0
        while self.high_init * self.decay ** (k + 1) >= self.floor:
            k += 1
        return k + 1


@dataclass(frozen=True)
class CannyPass:
    high: float
    low: float
    count: int


@dataclass(frozen=True)
class EdgeField:
    """Edge pixels ``points[k] = (x, y)`` with Sobel gradients ``gradients[k] = (gx, gy)``."""

    points: np.ndarray
    gradients: np.ndarray
    source_dims: tuple[int, int]
    passes: tuple[CannyPass, ...] = field(default=())

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        grads = np.asarray(self.gradients, dtype=np.float64).reshape(-1, 2)
        if len(pts) != len(grads):
            raise ValueError("points and gradients must be parallel arrays")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "gradients", grads)
        object.__setattr__(self, "source_dims", (int(self.source_dims[0]), int(self.source_dims[1])))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.gradients[:, 0], self.gradients[:, 1])

    @property
    def final_thresholds(self) -> tuple[float, float] | None:
        if not self.passes:
            return None
        return self.passes[-1].high, self.passes[-1].low


# --------------------------------------------------------------------------
# Canny
# --------------------------------------------------------------------------


def _direction_bins(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Quantize gradient direction (mod 180 deg) to 0, 45, 90, 135 -> bins 0..3."""
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    return (np.floor((ang + 22.5) / 45.0).astype(np.intp)) % 4


# Neighbor offsets (dy, dx) along the gradient for each bin, y pointing down.
_BIN_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def non_max_suppression(field: VectorField) -> np.ndarray:
    """Thin ridges of gradient magnitude; returns the suppressed magnitude map.

    A pixel survives when it is strictly larger than its backward neighbor and
    no smaller than its forward neighbor along the quantized gradient, which
    keeps exactly one pixel of a two-pixel plateau.
    """
    mag = field.magnitude()
    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = mag
    bins = _direction_bins(field.gx, field.gy)
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dy, dx) in enumerate(_BIN_STEPS):
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        sel = bins == b
        keep |= sel & (mag > bwd) & (mag >= fwd)
    return np.where(keep & (mag > 0), mag, 0.0)


_EIGHT = np.ones((3, 3), dtype=bool)


def hysteresis(thin: np.ndarray, high: float, low: float) -> np.ndarray:
    """Keep weak pixels (>= low) that are 8-connected to a strong pixel (>= high)."""
    weak = thin >= low
    weak &= thin > 0
    strong = weak & (thin >= high)
    if not strong.any():
        return np.zeros_like(weak)
    labels, n = ndimage.label(weak, structure=_EIGHT)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return hit[labels]


def canny_pass(field: VectorField, high: float, low: float, thin: np.ndarray | None = None) -> np.ndarray:
    if thin is None:
        thin = non_max_suppression(field)
    return hysteresis(thin, high, low)


def adaptive_canny(img: GrayImage, cfg: CannyConfig | None = None) -> EdgeField:
    """Canny with thresholds decayed geometrically until enough edge pixels appear.

    Pass ``k`` uses ``high_init * decay**k`` and ``low_init * decay**k``. The
    loop stops once the edge count reaches ``density_target * area`` or the
    next high threshold would fall below ``floor``.
    """
    cfg = cfg or CannyConfig()
    if img.width < 3 or img.height < 3:
        raise DimensionError(f"Canny needs at least 3x3, got {img.width}x{img.height}")
    grad = sobel_gradients(img)
    thin = non_max_suppression(grad)
    target = cfg.density_target * img.width * img.height
    passes = []
    k = 0
    while True:
        factor = cfg.decay**k
        high, low = cfg.high_init * factor, cfg.low_init * factor
        mask = canny_pass(grad, high, low, thin)
        count = int(mask.sum())
        passes.append(CannyPass(high, low, count))
        if count >= target:
            break
        if cfg.high_init * cfg.decay ** (k + 1) < cfg.floor:
            break
        k += 1
    ys, xs = np.nonzero(mask)
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    grads = np.stack([grad.gx[ys, xs], grad.gy[ys, xs]], axis=1)
    return EdgeField(pts, grads, img.dims, tuple(passes))


# --------------------------------------------------------------------------
# Mask and pyramid
# --------------------------------------------------------------------------


def edge_mask(field: EdgeField, scale: float | None = None) -> GrayImage:
    """E_0: edge pixels carry ``2 * (sigmoid(|g| / s) - 0.5)``, everything else 0.

    ``s`` defaults to the mean edge magnitude.
    """
    w, h = field.source_dims
    out = np.zeros((h, w))
    if len(field):
        mags = field.magnitudes
        s = float(mags.mean()) if scale is None else float(scale)
        vals = 2.0 * (expit(mags / s) - 0.5)
        xs = field.points[:, 0].astype(np.intp)
        ys = field.points[:, 1].astype(np.intp)
        out[ys, xs] = vals
    return GrayImage(out)


@dataclass(frozen=True)
class EdgePyramid:
    levels: tuple[GrayImage, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def dims(self) -> list[tuple[int, int]]:
        return [lvl.dims for lvl in self.levels]


def build_edge_pyramid(mask: GrayImage, levels: int = PYRAMID_LEVELS) -> EdgePyramid:
    """E_1..E_levels by repeated 2x2 max pooling of E_0."""
    if mask.data.size and (mask.data.min() < 0 or mask.data.max() > 1):
        raise ValueError("edge mask values must lie in [0, 1]")
    out = []
    cur = mask
    for i in range(levels):
        if cur.width < 2 or cur.height < 2:
            raise DimensionError(
                f"mask {mask.width}x{mask.height} too small for {levels} pooling rounds (failed at level {i + 1})"
            )
        cur = max_pool_2x2(cur)
        out.append(cur)
    return EdgePyramid(tuple(out))
