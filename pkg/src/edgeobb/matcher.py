"""Shape-based template matching on edge gradient directions.

The score of a pose is the mean cosine between the template's edge gradients
and the source gradients sampled under that pose. Rotation turns both the
template offsets and its gradient vectors about the template window center,
so ``angle == 0`` reduces to the plain translational score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .edges import CannyConfig, adaptive_canny
from .errors import ArgumentError, EmptyTemplateError
from .imagecore import GrayImage, VectorField, sample_many, sobel_gradients

EPS = 1e-9


@dataclass(frozen=True)
class TemplateModel:
    # (r_i, c_i): row/column offsets of each edge point from the window's top-left pixel.
    offsets: np.ndarray
    # Unit gradient directions (gx, gy) per edge point.
    gradients: np.ndarray
    # Rotation pivot (row, col), the window center.
    pivot: tuple[float, float]
    size: tuple[int, int]

    @property
    def n(self) -> int:
        return len(self.offsets)

    @property
    def diagonal(self) -> float:
        return math.hypot(*self.size)


@dataclass(frozen=True)
class MatchResult:
    r: float
    c: float
    angle: float
    score: float

    def center(self, tpl: TemplateModel) -> tuple[float, float]:
        """Source position ``(x, y)`` of the template window center."""
        return self.c + tpl.pivot[1], self.r + tpl.pivot[0]

    def to_json(self, tpl: TemplateModel | None = None) -> dict:
        rec = {"r": self.r, "c": self.c, "angle_deg": math.degrees(self.angle), "score": self.score}
        if tpl is not None:
            x, y = self.center(tpl)
            rec["center_x"], rec["center_y"] = x, y
        return rec


def build_template(img: GrayImage, cfg: CannyConfig | None = None) -> TemplateModel:
    edges = adaptive_canny(img, cfg)
    if len(edges) == 0:
        raise EmptyTemplateError("template image produced no edge points")
    offsets = edges.points[:, ::-1].copy()  # (x, y) -> (r, c)
    g = edges.gradients
    unit = g / np.hypot(g[:, 0], g[:, 1])[:, None]
    pivot = ((img.height - 1) / 2.0, (img.width - 1) / 2.0)
    return TemplateModel(offsets, unit, pivot, (img.width, img.height))


def _posed(tpl: TemplateModel, angle: float):
    """Offsets ``(dx, dy)`` from the anchor and gradient directions after rotation."""
    c, s = math.cos(angle), math.sin(angle)
    pr, pc = tpl.pivot
    ox = tpl.offsets[:, 1] - pc
    oy = tpl.offsets[:, 0] - pr
    dx = pc + c * ox - s * oy
    dy = pr + s * ox + c * oy
    gx = c * tpl.gradients[:, 0] - s * tpl.gradients[:, 1]
    gy = s * tpl.gradients[:, 0] + c * tpl.gradients[:, 1]
    return dx, dy, gx, gy


def _cos_terms(gx, gy, qx, qy):
    norm = np.hypot(qx, qy)
    safe = np.where(norm < EPS, 1.0, norm)
    return np.where(norm < EPS, 0.0, (gx * qx + gy * qy) / safe)


def similarity_at(tpl: TemplateModel, src: VectorField, r: float, c: float, angle: float) -> float:
    """Mean cosine between template gradients and source gradients at pose ``(r, c, angle)``.

    ``(r, c)`` is the source position of the window's top-left pixel before
    rotation; source samples with norm below 1e-9 contribute zero.
    """
    dx, dy, gx, gy = _posed(tpl, angle)
    qx, qy = sample_many(src, c + dx, r + dy)
    return float(np.mean(_cos_terms(gx, gy, qx, qy)))


def score_map(tpl: TemplateModel, src: VectorField, angle: float, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Scores for every integer anchor in ``rows x cols`` at one angle.

    ``rows`` and ``cols`` must be consecutive integer ranges. Each template
    point sits at a fixed fractional offset, so its bilinear lookup over the
    anchor grid is four shifted slices of the source.
    """
    for name, arr in (("rows", rows), ("cols", cols)):
        if len(arr) == 0 or np.any(np.diff(arr) != 1):
            raise ArgumentError(f"{name} must be a non-empty consecutive integer range")
    dx, dy, gx, gy = _posed(tpl, angle)
    h, w = src.gx.shape
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    reach = int(math.ceil(max(np.abs(dx).max(), np.abs(dy).max()))) + 2
    pad_lo_r = max(0, reach - r0)
    pad_lo_c = max(0, reach - c0)
    pad_hi_r = max(0, r1 + reach + 2 - h)
    pad_hi_c = max(0, c1 + reach + 2 - w)
    GX = np.pad(src.gx, ((pad_lo_r, pad_hi_r), (pad_lo_c, pad_hi_c)))
    GY = np.pad(src.gy, ((pad_lo_r, pad_hi_r), (pad_lo_c, pad_hi_c)))
    nr, nc = len(rows), len(cols)
    total = np.zeros((nr, nc))
    for i in range(tpl.n):
        ix, iy = math.floor(dx[i]), math.floor(dy[i])
        fx, fy = dx[i] - ix, dy[i] - iy
        ra = r0 + iy + pad_lo_r
        ca = c0 + ix + pad_lo_c
        sl00 = (slice(ra, ra + nr), slice(ca, ca + nc))
        sl10 = (slice(ra, ra + nr), slice(ca + 1, ca + 1 + nc))
        sl01 = (slice(ra + 1, ra + 1 + nr), slice(ca, ca + nc))
        sl11 = (slice(ra + 1, ra + 1 + nr), slice(ca + 1, ca + 1 + nc))
        w00, w10, w01, w11 = (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy
        qx = w00 * GX[sl00] + w10 * GX[sl10] + w01 * GX[sl01] + w11 * GX[sl11]
        qy = w00 * GY[sl00] + w10 * GY[sl10] + w01 * GY[sl01] + w11 * GY[sl11]
        term = _cos_terms(gx[i], gy[i], qx, qy)
        # Out-of-bounds samples are zero by contract, not partially interpolated.
        xs = cols + dx[i]
        ys = rows + dy[i]
        okc = (xs >= 0) & (xs <= w - 1)
        okr = (ys >= 0) & (ys <= h - 1)
        total += term * okr[:, None] * okc[None, :]
    return total / tpl.n


def _angle_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if hi < lo:
        raise ArgumentError(f"empty angle range [{lo}, {hi}]")
    if step <= 0:
        raise ArgumentError("angle_step must be positive")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def angle_gap(a: float, b: float) -> float:
    """Absolute angular distance on the circle, in [0, pi]."""
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def nms(candidates: list[MatchResult], radius: float, angle_tol: float) -> list[MatchResult]:
    """Greedy suppression: drop results close to a better one in both position and angle."""
    kept: list[MatchResult] = []
    for cand in sorted(candidates, key=lambda m: -m.score):
        clash = any(
            math.hypot(cand.r - k.r, cand.c - k.c) < radius and angle_gap(cand.angle, k.angle) < angle_tol
            for k in kept
        )
        if not clash:
            kept.append(cand)
    return kept


def _parabolic_offset(sm: float, s0: float, sp: float) -> float:
    denom = sm - 2.0 * s0 + sp
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (sm - sp) / denom, -1.0, 1.0))


def refine(tpl: TemplateModel, src: VectorField, m: MatchResult, angle_step: float, rounds: int = 4) -> MatchResult:
    """3-point parabolic fits in r, c and angle, each axis independently.

    The first pass uses the grid spacing; later passes re-center on the
    updated pose with the stencil halved each time, since the score peak is
    sharper than a parabola. The total move stays within one grid step.
    """
    f = lambda r, c, a: similarity_at(tpl, src, r, c, a)  # noqa: E731
    r, c, a = m.r, m.c, m.angle
    h = 1.0
    for _ in range(rounds):
        s0 = f(r, c, a)
        ha = h * angle_step
        dr = h * _parabolic_offset(f(r - h, c, a), s0, f(r + h, c, a))
        dc = h * _parabolic_offset(f(r, c - h, a), s0, f(r, c + h, a))
        da = ha * _parabolic_offset(f(r, c, a - ha), s0, f(r, c, a + ha))
        r = float(np.clip(r + dr, m.r - 1, m.r + 1))
        c = float(np.clip(c + dc, m.c - 1, m.c + 1))
        a = float(np.clip(a + da, m.angle - angle_step, m.angle + angle_step))
        h *= 0.5
    return MatchResult(r, c, a, f(r, c, a))


def match_search(
    tpl: TemplateModel,
    src: GrayImage,
    angle_range: tuple[float, float] = (-math.pi, math.pi),
    angle_step: float = math.radians(2.0),
    score_min: float = 0.7,
    nms_radius: float | None = None,
    refine_results: bool = True,
) -> list[MatchResult]:
    """Sweep all integer anchors and angles, keep local maxima, suppress, refine.

    Anchors range so that the window center visits every source pixel.
    """
    angles = _angle_grid(angle_range[0], angle_range[1], angle_step)
    if not (0 < score_min):
        raise ArgumentError("score_min must be positive")
    if nms_radius is None:
        nms_radius = 0.5 * tpl.diagonal
    field = sobel_gradients(src)
    pr, pc = tpl.pivot
    rows = np.arange(-int(math.floor(pr)), src.height - int(math.floor(pr)))
    cols = np.arange(-int(math.floor(pc)), src.width - int(math.floor(pc)))
    vol = np.stack([score_map(tpl, field, a, rows, cols) for a in angles])
    peaks = (vol == ndimage.maximum_filter(vol, size=3, mode="nearest")) & (vol >= score_min)
    cands = [
        MatchResult(float(rows[ir]), float(cols[ic]), float(angles[ia]), float(vol[ia, ir, ic]))
        for ia, ir, ic in zip(*np.nonzero(peaks))
    ]
    kept = nms(cands, nms_radius, 2.0 * angle_step)
    if refine_results:
        kept = [refine(tpl, field, m, angle_step) for m in kept]
        kept.sort(key=lambda m: -m.score)
    return kept
