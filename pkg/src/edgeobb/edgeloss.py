"""Edge-gradient similarity between a ground-truth box and a predicted box.

Every edge point ``p_i`` is expressed relative to the GT box's top-left
corner, the same relative position is located in the predicted box (PB), and
edge points ``p_j`` near that mapped position are paired with ``p_i`` through
a Gaussian weight. The similarity sums

    w_ij * cos(g_i, g_j) * a(p_i | GT) * a(p_j | PB)

over all pairs, where ``a`` is the soft containment indicator. The gradient
with respect to the five PB parameters flows through the mapped positions
(Gaussian weights) and through ``a(p_j | PB)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .edges import CannyConfig, EdgeField, adaptive_canny
from .errors import DegenerateInputError
from .geometry import OrientedBox, local_coords, soft_containment_arrays

PARAM_NAMES = ("cx", "cy", "w", "h", "theta")
DENOM_EPS = 1e-8
# Edge points whose GT containment falls below this are dropped from the outer sum.
PRUNE_GT = 1e-12


@dataclass(frozen=True)
class LossConfig:
    sigma_px: float | None = None  # None: max(2, 0.03 * min(pb.w, pb.h)) per call
    trunc_sigmas: float | None = 3.0  # None disables truncation (all pairs)
    slope: float = 10.0
    literal: bool = False
    normalizer: str = "ncc"  # "ncc" or "per_point"; ignored in literal mode
    margin_px: float = 2.0
    full_extent: bool = False
    taper_sigmas: float = 0.5
    raw_inner: bool = False
    rotation_compensated: bool = False

    def __post_init__(self):
        if self.sigma_px is not None and self.sigma_px <= 0:
            raise ValueError("sigma_px must be positive")
        if self.trunc_sigmas is not None and self.trunc_sigmas < 1:
            raise ValueError("trunc_radius must be at least sigma_px")
        if self.normalizer not in ("ncc", "per_point"):
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        if self.taper_sigmas < 0 or (self.trunc_sigmas is not None and self.taper_sigmas >= self.trunc_sigmas):
            raise ValueError("taper_sigmas must lie in [0, trunc_sigmas)")

    def resolve_sigma(self, pb_params) -> float:
        if self.sigma_px is not None:
            return float(self.sigma_px)
        return max(2.0, 0.03 * min(abs(pb_params[2]), abs(pb_params[3])))

    def trunc_radius(self, sigma: float) -> float:
        return math.inf if self.trunc_sigmas is None else self.trunc_sigmas * sigma

    @classmethod
    def from_json(cls, rec: dict) -> "LossConfig":
        keys = {
            "sigma_px": "sigma_px",
            "trunc_sigmas": "trunc_sigmas",
            "slope": "slope",
            "literal": "literal",
            "normalizer": "normalizer",
            "margin_px": "margin_px",
            "full_extent": "full_extent",
            "taper_sigmas": "taper_sigmas",
            "raw_inner": "raw_inner",
            "rotation_compensated": "rotation_compensated",
        }
        return cls(**{keys[k]: v for k, v in rec.items() if k in keys})

    @classmethod
    def load(cls, path) -> "LossConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossEval:
    similarity: float
    loss: float
    grad: np.ndarray | None
    pairs_used: int
    sigma: float


@dataclass(frozen=True)
class Correspondence:
    source_point: np.ndarray
    mapped_point: np.ndarray
    rel: tuple[float, float]
    # d(mapped)/d(cx, cy, w, h, theta) of the PB, shape (2, 5).
    jacobian: np.ndarray


# --------------------------------------------------------------------------
# Correspondence and weights
# --------------------------------------------------------------------------


def _as_params(box) -> np.ndarray:
    if isinstance(box, OrientedBox):
        return box.params()
    return np.asarray(box, dtype=np.float64).reshape(5)


def _relative_offsets(gt: OrientedBox, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offsets from the GT center in units of GT width / height (alpha - 1/2, beta - 1/2)."""
    u, v = local_coords(gt, pts[:, 0], pts[:, 1])
    return np.asarray(u) / gt.w, np.asarray(v) / gt.h


def _map_many(params: np.ndarray, ru: np.ndarray, rv: np.ndarray):
    """Mapped positions ``(n, 2)`` and their Jacobian ``(n, 2, 5)``."""
    cx, cy, w, h, theta = params
    c, s = math.cos(theta), math.sin(theta)
    uhat = np.array([c, s])
    vhat = np.array([-s, c])
    mapped = np.array([cx, cy]) + (ru * w)[:, None] * uhat + (rv * h)[:, None] * vhat
    jac = np.zeros((len(ru), 2, 5))
    jac[:, 0, 0] = 1.0
    jac[:, 1, 1] = 1.0
    jac[:, :, 2] = ru[:, None] * uhat
    jac[:, :, 3] = rv[:, None] * vhat
    jac[:, :, 4] = (ru * w)[:, None] * vhat - (rv * h)[:, None] * uhat
    return mapped, jac


def map_point(gt: OrientedBox, pb: OrientedBox, p) -> Correspondence:
    """Carry ``p`` from GT to PB by its relative position w.r.t. the top-left corners."""
    pt = np.asarray(p, dtype=np.float64).reshape(1, 2)
    ru, rv = _relative_offsets(gt, pt)
    mapped, jac = _map_many(pb.params(), ru, rv)
    return Correspondence(pt[0], mapped[0], (float(ru[0] + 0.5), float(rv[0] + 0.5)), jac[0])


def _smootherstep(t):
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _smootherstep_deriv(t):
    return 30.0 * t * t * (t - 1.0) ** 2


def _weights(diff: np.ndarray, sigma: float, radius: float, taper: float):
    """Gaussian weights of displacements ``diff`` (``(k, 2)``) and d(w)/d(diff).

    Inside ``radius - taper`` this is exactly ``exp(-d^2 / 2 sigma^2)``; over
    the last ``taper`` pixels it is rolled off to zero with a C2 smootherstep.
    """
    d2 = np.einsum("ij,ij->i", diff, diff)
    g = np.exp(-0.5 * d2 / sigma**2)
    dg = -g[:, None] * diff / sigma**2
    if not math.isfinite(radius) or taper <= 0:
        if math.isfinite(radius):
            keep = d2 <= radius**2
            g = np.where(keep, g, 0.0)
            dg = dg * keep[:, None]
        return g, dg
    d = np.sqrt(d2)
    start = radius - taper
    t = np.clip((d - start) / taper, 0.0, 1.0)
    roll = 1.0 - _smootherstep(t)
    droll = np.where((d > start) & (d < radius), -_smootherstep_deriv(t) / taper, 0.0)
    safe_d = np.where(d > 0, d, 1.0)
    w = g * roll
    dw = dg * roll[:, None] + (g * droll / safe_d)[:, None] * diff
    return w, dw


def gaussian_weights(mapped, edge: EdgeField, cfg: LossConfig, sigma: float | None = None) -> list[tuple[int, float]]:
    """Weights of the edge points near a mapped position, as ``(j, w_j)`` pairs."""
    if sigma is None:
        if cfg.sigma_px is None:
            raise ValueError("gaussian_weights needs an explicit sigma when cfg.sigma_px is None")
        sigma = cfg.sigma_px
    m = np.asarray(mapped, dtype=np.float64).reshape(2)
    radius = cfg.trunc_radius(sigma)
    idx = _neighbors(edge, m[None, :], radius)[1]
    w, _ = _weights(m[None, :] - edge.points[idx], sigma, radius, cfg.taper_sigmas * sigma)
    return [(int(j), float(wj)) for j, wj in zip(idx, w) if wj > 0]


def _tree(edge: EdgeField) -> cKDTree:
    tree = edge.__dict__.get("_kdtree")
    if tree is None:
        tree = cKDTree(edge.points)
        object.__setattr__(edge, "_kdtree", tree)
    return tree


def _neighbors(edge: EdgeField, queries: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """All ``(query index, edge index)`` pairs within ``radius``."""
    n_pts = len(edge)
    nq = len(queries)
    if not math.isfinite(radius):
        qi = np.repeat(np.arange(nq), n_pts)
        pj = np.tile(np.arange(n_pts), nq)
        return qi, pj
    hits = _tree(edge).query_ball_point(queries, radius, return_sorted=True)
    lens = np.fromiter((len(hh) for hh in hits), dtype=np.intp, count=nq)
    qi = np.repeat(np.arange(nq), lens)
    pj = np.concatenate([np.asarray(hh, dtype=np.intp) for hh in hits]) if lens.sum() else np.zeros(0, np.intp)
    return qi, pj


def _align_angle(pb: np.ndarray, gt: OrientedBox) -> np.ndarray:
    """Pick the PB representative (theta + k*pi) whose orientation is nearest the GT's.

    Both describe the same rectangle, but the top-left anchor of the
    correspondence flips under a half turn.
    """
    out = pb.copy()
    out[4] += math.pi * round((gt.theta - pb[4]) / math.pi)
    return out


# --------------------------------------------------------------------------
# Similarity and gradient
# --------------------------------------------------------------------------


def _evaluate(gt: OrientedBox, pb, edge: EdgeField, cfg: LossConfig, want_grad: bool, sigma: float | None = None):
    if len(edge) == 0:
        raise DegenerateInputError("edge field is empty")
    raw = _as_params(pb)
    if sigma is None:
        sigma = cfg.resolve_sigma(raw)
    params = _align_angle(raw, gt)
    radius = cfg.trunc_radius(sigma)
    taper = cfg.taper_sigmas * sigma if math.isfinite(radius) else 0.0
    pts = edge.points
    n = len(pts)

    a_gt, _ = soft_containment_arrays(gt.params(), pts[:, 0], pts[:, 1], cfg.slope, cfg.full_extent, cfg.margin_px)
    if cfg.literal and not math.isfinite(radius):
        active = np.arange(n)
    else:
        active = np.nonzero(a_gt >= PRUNE_GT)[0]
    ru, rv = _relative_offsets(gt, pts[active])
    mapped, jac = _map_many(params, ru, rv)
    a_pb, da_pb = soft_containment_arrays(params, pts[:, 0], pts[:, 1], cfg.slope, cfg.full_extent, cfg.margin_px)

    qi, pj = _neighbors(edge, mapped, radius)
    ii = active[qi]
    diff = mapped[qi] - pts[pj]
    w, dw = _weights(diff, sigma, radius, taper)
    used = w > 0
    qi, pj, ii, w, dw = qi[used], pj[used], ii[used], w[used], dw[used]

    g = edge.gradients
    if cfg.raw_inner:
        gi, gj = g[ii], g[pj]
    else:
        unit = g / np.hypot(g[:, 0], g[:, 1])[:, None]
        gi, gj = unit[ii], unit[pj]
    if cfg.rotation_compensated:
        delta = params[4] - gt.theta
        c, s = math.cos(delta), math.sin(delta)
        rot = np.stack([c * gi[:, 0] - s * gi[:, 1], s * gi[:, 0] + c * gi[:, 1]], axis=1)
        rot_d = np.stack([-s * gi[:, 0] - c * gi[:, 1], c * gi[:, 0] - s * gi[:, 1]], axis=1)
        cosv = np.einsum("ij,ij->i", rot, gj)
        dcos = np.einsum("ij,ij->i", rot_d, gj)
    else:
        cosv = np.einsum("ij,ij->i", gi, gj)
        dcos = None

    # Per-pair d(w)/d(params) through the mapped position.
    dw_dp = np.einsum("ki,kij->kj", dw, jac[qi]) if want_grad else None
    apb = a_pb[pj]
    term = w * cosv * apb  # inner-sum contribution before a(p_i | GT)
    if want_grad:
        dterm = (dw_dp * (cosv * apb)[:, None]) + (w * cosv)[:, None] * da_pb[pj]
        if dcos is not None:
            dterm[:, 4] += w * apb * dcos

    a_i = a_gt[ii]
    grad = None
    if cfg.literal:
        sim = float(np.sum(a_i * term)) / n**2
        if want_grad:
            grad = -(a_i[:, None] * dterm).sum(axis=0) / n**2
        loss = -sim
    elif cfg.normalizer == "ncc":
        cross = float(np.sum(a_i * term))
        auto_e, dauto_e = _edge_autocorr(edge, cfg, sigma, radius, taper, a_pb, da_pb, want_grad)
        auto_m, dauto_m = _mapped_autocorr(
            mapped, jac, a_gt[active], edge.gradients[active], cfg, sigma, radius, taper, want_grad
        )
        root = math.sqrt(max(auto_e, 0.0) * max(auto_m, 0.0))
        denom = root + DENOM_EPS
        sim = cross / denom
        if want_grad:
            dcross = (a_i[:, None] * dterm).sum(axis=0)
            droot = np.zeros(5)
            if auto_e > 0 and auto_m > 0:
                droot = 0.5 * root * (dauto_e / auto_e + dauto_m / auto_m)
            grad = -(dcross / denom - cross * droot / denom**2)
        loss = 1.0 - sim
    else:
        nq = len(active)
        num = np.bincount(qi, weights=term, minlength=nq)
        den = np.bincount(qi, weights=w * apb, minlength=nq) + DENOM_EPS
        a_act = a_gt[active]
        outer = float(a_act.sum())
        if outer <= 0:
            sim, grad = 0.0, (np.zeros(5) if want_grad else None)
        else:
            sim = float(np.sum(a_act * num / den)) / outer
            if want_grad:
                dden_pairs = dw_dp * apb[:, None] + w[:, None] * da_pb[pj]
                dnum = np.zeros((nq, 5))
                dden = np.zeros((nq, 5))
                np.add.at(dnum, qi, dterm)
                np.add.at(dden, qi, dden_pairs)
                dratio = dnum / den[:, None] - (num / den**2)[:, None] * dden
                grad = -(a_act[:, None] * dratio).sum(axis=0) / outer
        loss = 1.0 - sim
    return LossEval(sim, loss, grad, int(len(w)), sigma)


def _pair_cos(g: np.ndarray, i: np.ndarray, j: np.ndarray, raw: bool) -> np.ndarray:
    if raw:
        return np.einsum("ij,ij->i", g[i], g[j])
    unit = g / np.hypot(g[:, 0], g[:, 1])[:, None]
    return np.einsum("ij,ij->i", unit[i], unit[j])


def _edge_autocorr(edge, cfg, sigma, radius, taper, a_pb, da_pb, want_grad):
    """<A, A> of the PB-weighted edge field: sum_jk a_j a_k w(p_j - p_k) cos_jk.

    Pair geometry is fixed, so pairs and kernel values are cached per field.
    """
    key = (sigma, radius, taper, cfg.raw_inner)
    cache = edge.__dict__.setdefault("_autopairs", {})
    if key not in cache:
        pts = edge.points
        if math.isfinite(radius):
            pairs = _tree(edge).query_pairs(radius, output_type="ndarray")
        else:
            pairs = np.array(np.triu_indices(len(pts), 1)).T
        pairs = pairs.reshape(-1, 2)
        wk, _ = _weights(pts[pairs[:, 0]] - pts[pairs[:, 1]], sigma, radius, taper)
        idx = np.arange(len(pts))
        diag = _pair_cos(edge.gradients, idx, idx, cfg.raw_inner)
        kc = wk * _pair_cos(edge.gradients, pairs[:, 0], pairs[:, 1], cfg.raw_inner)
        if len(cache) > 8:
            cache.clear()
        cache[key] = (pairs, kc, diag)
    pairs, kc, diag = cache[key]
    j, k = pairs[:, 0], pairs[:, 1]
    value = 2.0 * float(np.sum(kc * a_pb[j] * a_pb[k])) + float(np.sum(diag * a_pb**2))
    grad = None
    if want_grad:
        grad = 2.0 * ((kc * a_pb[k])[:, None] * da_pb[j] + (kc * a_pb[j])[:, None] * da_pb[k]).sum(axis=0)
        grad += 2.0 * ((diag * a_pb)[:, None] * da_pb).sum(axis=0)
    return value, grad


def _mapped_autocorr(mapped, jac, a_src, g_src, cfg, sigma, radius, taper, want_grad):
    """<B, B> of the mapped GT field: sum_ik a_i a_k w(m_i - m_k) cos_ik."""
    m = len(mapped)
    if math.isfinite(radius):
        pairs = cKDTree(mapped).query_pairs(radius, output_type="ndarray").reshape(-1, 2)
    else:
        pairs = np.array(np.triu_indices(m, 1)).T.reshape(-1, 2)
    i, k = pairs[:, 0], pairs[:, 1]
    wk, dwk = _weights(mapped[i] - mapped[k], sigma, radius, taper)
    coef = a_src[i] * a_src[k] * _pair_cos(g_src, i, k, cfg.raw_inner)
    idx = np.arange(m)
    diag = a_src**2 * _pair_cos(g_src, idx, idx, cfg.raw_inner)
    value = 2.0 * float(np.sum(coef * wk)) + float(np.sum(diag))
    grad = None
    if want_grad:
        # d(m_i - m_k)/d(params) = jac_i - jac_k
        grad = 2.0 * np.einsum("p,pa,pab->b", coef, dwk, jac[i] - jac[k])
    return value, grad


def edge_similarity(gt: OrientedBox, pb, edge: EdgeField, cfg: LossConfig | None = None, sigma=None) -> LossEval:
    return _evaluate(gt, pb, edge, cfg or LossConfig(), want_grad=False, sigma=sigma)


def edge_loss_grad(gt: OrientedBox, pb, edge: EdgeField, cfg: LossConfig | None = None, sigma=None) -> LossEval:
    """Loss and its analytic gradient w.r.t. the PB parameters ``(cx, cy, w, h, theta)``.

    ``sigma`` pins the Gaussian width; by default it is resolved from ``pb``
    once and then held fixed.
    """
    return _evaluate(gt, pb, edge, cfg or LossConfig(), want_grad=True, sigma=sigma)


# --------------------------------------------------------------------------
# Gradient check harness
# --------------------------------------------------------------------------

FD_STEPS = np.array([1e-4, 1e-4, 1e-4, 1e-4, 1e-5])


def numeric_grad(gt, pb, edge, cfg, sigma, steps=FD_STEPS) -> np.ndarray:
    base = _as_params(pb)
    out = np.zeros(5)
    for k in range(5):
        hi = base.copy()
        lo = base.copy()
        hi[k] += steps[k]
        lo[k] -= steps[k]
        fp = _evaluate(gt, hi, edge, cfg, False, sigma).loss
        fm = _evaluate(gt, lo, edge, cfg, False, sigma).loss
        out[k] = (fp - fm) / (2 * steps[k])
    return out


def relative_errors(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """Per-entry ``|a - n| / max(|a|, |n|)``; entries where both are below ``floor`` count as 0."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(scale < floor, 0.0, np.abs(analytic - numeric) / np.where(scale < floor, 1.0, scale))


@dataclass(frozen=True)
class GradCheckReport:
    trials: int
    max_rel_err: dict
    mean_rel_err: dict
    rows: list

    def to_json(self) -> dict:
        return {"trials": self.trials, "max_rel_err": self.max_rel_err, "mean_rel_err": self.mean_rel_err}


def grad_check(
    trials: int = 100,
    seed: int = 0,
    cfg: LossConfig | None = None,
    canny: CannyConfig | None = None,
    scene_kwargs: dict | None = None,
    include_identity: bool = True,
    max_shift: float = 3.0,
    max_scale: float = 0.1,
    max_rot_deg: float = 5.0,
) -> GradCheckReport:
    """Analytic vs. central-difference gradients on random rectangle scenes.

    Trial 0 (when ``include_identity``) evaluates at PB == GT.
    """
    from .scenes import random_rect_scene, render_scene

    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or LossConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        spec = random_rect_scene(rng, **(scene_kwargs or {}))
        img, gts = render_scene(spec, seed=int(rng.integers(2**31)))
        gt = gts[0]
        edge = adaptive_canny(img, canny)
        if include_identity and t == 0:
            pb = gt.params()
        else:
            pb = perturb(gt, rng, max_shift, max_scale, max_rot_deg).params()
        sigma = cfg.resolve_sigma(pb)
        ev = edge_loss_grad(gt, pb, edge, cfg, sigma=sigma)
        num = numeric_grad(gt, pb, edge, cfg, sigma)
        rows.append({"analytic": ev.grad, "numeric": num, "rel_err": relative_errors(ev.grad, num)})
    errs = np.array([r["rel_err"] for r in rows])
    return GradCheckReport(
        trials,
        {k: float(errs[:, i].max()) for i, k in enumerate(PARAM_NAMES)},
        {k: float(errs[:, i].mean()) for i, k in enumerate(PARAM_NAMES)},
        rows,
    )


def perturb(box: OrientedBox, rng, max_shift: float, max_scale: float, max_rot_deg: float) -> OrientedBox:
    """Uniform perturbation of center, sizes (relative) and angle."""
    dx, dy = rng.uniform(-max_shift, max_shift, 2)
    sw, sh = rng.uniform(-max_scale, max_scale, 2)
    dt = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    return OrientedBox.from_params(box.cx + dx, box.cy + dy, box.w * (1 + sw), box.h * (1 + sh), box.theta + dt)


def variant(cfg: LossConfig, name: str) -> LossConfig:
    """Named loss variants used by the benchmark."""
    if name == "normalized":
        return replace(cfg, literal=False, rotation_compensated=False)
    if name == "literal":
        return replace(cfg, literal=True, rotation_compensated=False)
    if name == "rotation_compensated":
        return replace(cfg, literal=False, rotation_compensated=True)
    if name == "per_point":
        return replace(cfg, literal=False, normalizer="per_point", rotation_compensated=False)
    raise ValueError(f"unknown loss variant {name!r}")
