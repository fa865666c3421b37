"""Oriented boxes in the long-edge-90 (LE90) parameterization.

A box is ``(cx, cy, w, h, theta)`` with ``w >= h`` the long edge and ``theta``
the long edge's angle to the image x-axis, folded into ``[-pi/2, pi/2)``.
Image coordinates have ``y`` pointing down, so a positive ``theta`` turns the
long edge clockwise on screen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import GeometryError

HALF_PI = 0.5 * math.pi
DEFAULT_SLOPE = 10.0
# Relative tolerance under which w and h count as equal when folding angles.
SQUARE_RTOL = 1e-9


def fold_angle(theta: float) -> float:
    """Map ``theta`` onto ``[-pi/2, pi/2)`` modulo pi."""
    t = math.fmod(theta + HALF_PI, math.pi)
    if t < 0:
        t += math.pi
    t -= HALF_PI
    if t >= HALF_PI:
        t -= math.pi
    return t


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise GeometryError(f"box field {name} is not finite")
        if not (self.w >= self.h > 0):
            raise GeometryError(f"LE90 box needs w >= h > 0, got w={self.w}, h={self.h}")
        if not (-HALF_PI <= self.theta < HALF_PI):
            raise GeometryError(f"theta {self.theta} outside [-pi/2, pi/2)")

    @classmethod
    def from_params(cls, cx, cy, w, h, theta) -> "OrientedBox":
        """Build a valid LE90 box from unconstrained parameters.

        Swaps ``w``/``h`` (with a quarter turn) when ``h > w`` and folds the
        angle; negative sizes are rejected.
        """
        w, h, theta = float(w), float(h), float(theta)
        if w <= 0 or h <= 0:
            raise GeometryError(f"box sizes must be positive, got w={w}, h={h}")
        if h > w:
            w, h = h, w
            theta += HALF_PI
        theta = fold_angle(theta)
        if abs(w - h) <= SQUARE_RTOL * w:
            theta = _fold_quarter(theta)
        return cls(float(cx), float(cy), w, h, theta)

    @classmethod
    def from_degrees(cls, cx, cy, w, h, theta_deg) -> "OrientedBox":
        return cls.from_params(cx, cy, w, h, math.radians(theta_deg))

    def params(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h, self.theta])

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    def translated(self, dx: float, dy: float) -> "OrientedBox":
        return OrientedBox(self.cx + dx, self.cy + dy, self.w, self.h, self.theta)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors along the width (long) and height (short) edges."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([c, s]), np.array([-s, c])

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta_deg": self.theta_deg}

    @classmethod
    def from_json(cls, rec: dict) -> "OrientedBox":
        return cls.from_degrees(rec["cx"], rec["cy"], rec["w"], rec["h"], rec["theta_deg"])


def _fold_quarter(theta: float) -> float:
    """Square tie-break: pick the representative in ``[-pi/4, pi/4)``."""
    q = 0.5 * HALF_PI
    t = math.fmod(theta + q, HALF_PI)
    if t < 0:
        t += HALF_PI
    t -= q
    if t >= q:
        t -= HALF_PI
    return t


# --------------------------------------------------------------------------
# Corner conversions
# --------------------------------------------------------------------------


def to_corners(box: OrientedBox) -> np.ndarray:
    """Four vertices ``(4, 2)`` clockwise on screen, starting at local (-w/2, -h/2)."""
    u, v = box.axes()
    c = np.array([box.cx, box.cy])
    hw, hh = 0.5 * box.w, 0.5 * box.h
    return np.array(
        [
            c - hw * u - hh * v,
            c + hw * u - hh * v,
            c + hw * u + hh * v,
            c - hw * u + hh * v,
        ]
    )


def signed_area(quad) -> float:
    """Shoelace area; positive for clockwise-on-screen order (y pointing down)."""
    q = np.asarray(quad, dtype=np.float64).reshape(-1, 2)
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def from_corners(quad, rel_tol: float = 0.01) -> OrientedBox:
    """LE90 box from a (possibly slightly noisy) rectangle given by 4 vertices.

    ``quad`` may be 8 numbers or a ``(4, 2)`` array, in either winding.
    Opposite edges must agree to within ``rel_tol`` of their length.
    """
    q = np.asarray(quad, dtype=np.float64)
    if q.size != 8:
        raise GeometryError(f"quad needs 4 vertices (8 numbers), got {q.size} numbers")
    q = q.reshape(4, 2)
    if not np.all(np.isfinite(q)):
        raise GeometryError("quad needs 4 finite vertices")
    edges = np.roll(q, -1, axis=0) - q
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths < 1e-6):
        raise GeometryError(f"degenerate quad edge lengths {lengths.tolist()}")
    for a, b in ((0, 2), (1, 3)):
        if abs(lengths[a] - lengths[b]) > rel_tol * max(lengths[a], lengths[b]):
            raise GeometryError(
                f"opposite edges differ by more than {rel_tol:.0%}: {lengths[a]:.6g} vs {lengths[b]:.6g}"
            )
    pair0 = 0.5 * (lengths[0] + lengths[2])
    pair1 = 0.5 * (lengths[1] + lengths[3])
    # Opposite edges run antiparallel; flip one so the unit vectors add up.
    d0 = edges[0] / lengths[0] - edges[2] / lengths[2]
    d1 = edges[1] / lengths[1] - edges[3] / lengths[3]
    if pair0 >= pair1:
        w, h, d = pair0, pair1, d0
    else:
        w, h, d = pair1, pair0, d1
    theta = math.atan2(d[1], d[0])
    center = q.mean(axis=0)
    return OrientedBox.from_params(center[0], center[1], w, h, theta)


# --------------------------------------------------------------------------
# Local frame and soft containment
# --------------------------------------------------------------------------


def local_coords(box: OrientedBox, px, py):
    """Coordinates in the box frame: ``u`` along the long edge, ``v`` along the short one.

    Works elementwise on arrays.
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = np.asarray(px, dtype=np.float64) - box.cx
    dy = np.asarray(py, dtype=np.float64) - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


@dataclass(frozen=True)
class SoftContainment:
    value: np.ndarray | float
    # d(value)/d(cx, cy, w, h, theta); trailing axis of length 5.
    d_value_d_params: np.ndarray


def soft_containment_arrays(
    params,
    px,
    py,
    slope: float = DEFAULT_SLOPE,
    full_extent: bool = False,
    margin: float = 0.0,
):
    """Soft inside-the-box indicator and its parameter gradient for many points.

    ``params`` is ``(cx, cy, w, h, theta)``; any representation of the box is
    accepted (the angle need not be folded). Each factor is
    ``1 - sigmoid(slope * (|d| - e))`` with ``e`` the half extent plus
    ``margin`` (or the full extent when ``full_extent`` is set).

    Returns ``(value, grad)`` with ``grad`` of shape ``(n, 5)``.
    """
    cx, cy, w, h, theta = (float(p) for p in params)
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    c, s = math.cos(theta), math.sin(theta)
    dx = px - cx
    dy = py - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    scale = 1.0 if full_extent else 0.5
    eu = scale * w + margin
    ev = scale * h + margin
    zu = slope * (np.abs(u) - eu)
    zv = slope * (np.abs(v) - ev)
    gu = expit(-zu)
    gv = expit(-zv)
    value = gu * gv
    # dG/dz = -G (1 - G); 1 - G == expit(z) evaluated without cancellation.
    dgu = -gu * expit(zu) * slope
    dgv = -gv * expit(zv) * slope
    su = np.sign(u)
    sv = np.sign(v)
    # d|u|/d(cx, cy, theta) and d|v|/d(...)
    du = np.stack([-c * su, -s * su, np.zeros_like(u), np.zeros_like(u), v * su], axis=-1)
    dv = np.stack([s * sv, -c * sv, np.zeros_like(v), np.zeros_like(v), -u * sv], axis=-1)
    # d(-e)/d(w, h)
    du[..., 2] -= scale
    dv[..., 3] -= scale
    grad = (dgu * gv)[..., None] * du + (gu * dgv)[..., None] * dv
    return value, grad


def soft_containment(
    box: OrientedBox,
    px: float,
    py: float,
    slope: float = DEFAULT_SLOPE,
    full_extent: bool = False,
    margin: float = 0.0,
) -> SoftContainment:
    value, grad = soft_containment_arrays(box.params(), px, py, slope, full_extent, margin)
    if np.ndim(value) == 0:
        return SoftContainment(float(value), np.asarray(grad, dtype=np.float64))
    return SoftContainment(value, grad)
