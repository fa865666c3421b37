"""Command-line front end: conversion, cropping, edges, matching, fitting, checks, attention."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import attention, fitter
from .edgeloss import LossConfig, grad_check, perturb, variant
from .edges import CannyConfig, adaptive_canny, build_edge_pyramid, edge_mask
from .errors import ArgumentError, EdgeObbError, GeometryError, ParseError
from .geometry import OrientedBox, from_corners, signed_area, to_corners
from .imagecore import GrayImage, atomic_write, load_pgm, write_pgm
from .matcher import _posed, build_template, match_search
from .scenes import random_rect_scene, render_scene

CROP_WINDOW = 1024
CROP_OVERLAP = 512
SKIP_PREFIXES = ("imagesource", "gsd")


# --------------------------------------------------------------------------
# DOTA annotations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DotaAnnotation:
    quad: np.ndarray  # (4, 2), clockwise in image coordinates
    label: str
    difficulty: int


def parse_dota_lines(lines) -> list[DotaAnnotation]:
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith(SKIP_PREFIXES):
            continue
        toks = line.split()
        if len(toks) != 10:
            raise ParseError(f"expected 10 fields (8 coordinates, label, difficulty), got {len(toks)}", lineno)
        try:
            coords = [float(t) for t in toks[:8]]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {' '.join(toks[:8])!r}", lineno) from None
        if not all(math.isfinite(v) for v in coords):
            raise ParseError("coordinates must be finite", lineno)
        try:
            diff = int(toks[9])
        except ValueError:
            raise ParseError(f"difficulty {toks[9]!r} is not an integer", lineno) from None
        if diff not in (0, 1):
            raise ParseError(f"difficulty must be 0 or 1, got {diff}", lineno)
        quad = np.array(coords).reshape(4, 2)
        if signed_area(quad) < 0:
            quad = quad[[0, 3, 2, 1]]
        out.append(DotaAnnotation(quad, toks[8], diff))
    return out


def parse_dota(path) -> list[DotaAnnotation]:
    with open(path, encoding="utf-8") as fh:
        return parse_dota_lines(fh)


def convert_le90(annotations) -> tuple[list[dict], list[dict]]:
    """LE90 records for every valid quad; invalid ones are returned as skip reports."""
    records, skipped = [], []
    for idx, ann in enumerate(annotations):
        try:
            box = from_corners(ann.quad)
        except GeometryError as exc:
            skipped.append({"index": idx, "label": ann.label, "error": str(exc)})
            continue
        rec = box.to_json()
        rec["label"] = ann.label
        rec["difficulty"] = ann.difficulty
        records.append(rec)
    return records, skipped


def reconstruct(record: dict) -> np.ndarray:
    return to_corners(OrientedBox.from_json(record))


# --------------------------------------------------------------------------
# Crops
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CropPlan:
    image_dims: tuple[int, int]
    window: int
    overlap: int
    windows: tuple[tuple[int, int], ...]

    def extent(self, origin: tuple[int, int]) -> tuple[int, int, int, int]:
        """``(x0, y0, x1, y1)`` of a window, clipped for images smaller than the window."""
        x0, y0 = origin
        w, h = self.image_dims
        return x0, y0, min(x0 + self.window, w), min(y0 + self.window, h)

    def to_json(self) -> dict:
        return {
            "image_dims": list(self.image_dims),
            "window": self.window,
            "overlap": self.overlap,
            "windows": [list(self.extent(o)) for o in self.windows],
        }


def _axis_origins(size: int, window: int, stride: int) -> list[int]:
    if size <= window:
        return [0]
    origins = list(range(0, size - window, stride))
    origins.append(size - window)
    return origins


def plan_crops(img_dims, window: int = CROP_WINDOW, overlap: int = CROP_OVERLAP) -> CropPlan:
    w, h = (int(v) for v in img_dims)
    if w < 1 or h < 1:
        raise ArgumentError(f"image dims must be >= 1, got {w}x{h}")
    if not (0 <= overlap < window):
        raise ArgumentError("overlap must lie in [0, window)")
    stride = window - overlap
    xs = _axis_origins(w, window, stride)
    ys = _axis_origins(h, window, stride)
    return CropPlan((w, h), window, overlap, tuple((x, y) for y in ys for x in xs))


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def load_configs(path) -> tuple[LossConfig, CannyConfig]:
    """Accepts ``{"loss": {...}, "canny": {...}}`` or a flat mix of both field sets."""
    if path is None:
        return LossConfig(), CannyConfig()
    with open(path) as fh:
        rec = json.load(fh)
    if not isinstance(rec, dict):
        raise ArgumentError("config must be a JSON object")
    loss_rec = rec.get("loss", rec)
    canny_rec = rec.get("canny", rec)
    canny_keys = {f.name for f in fields(CannyConfig)}
    return LossConfig.from_json(loss_rec), CannyConfig(**{k: v for k, v in canny_rec.items() if k in canny_keys})


def _json_arg(text: str):
    """Inline JSON or a path to a JSON file."""
    if text.lstrip().startswith(("{", "[")):
        return json.loads(text)
    with open(text) as fh:
        return json.load(fh)


def _write_json(path: Path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2) + "\n").encode())


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _out_dir(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_edges(args, loss_cfg, canny_cfg):
    img = load_pgm(args.image)
    field = adaptive_canny(img, canny_cfg)
    mask = edge_mask(field)
    out = _out_dir(args)
    stem = Path(args.image).stem
    mask_path = out / f"{stem}_edges.pgm"
    pts_path = out / f"{stem}_edges.jsonl"
    write_pgm(mask_path, GrayImage(np.rint(mask.data * 255.0)))
    lines = [
        json.dumps({"x": int(x), "y": int(y), "gx": float(gx), "gy": float(gy)})
        for (x, y), (gx, gy) in zip(field.points, field.gradients)
    ]
    atomic_write(pts_path, ("\n".join(lines) + ("\n" if lines else "")).encode())
    return {
        "count": len(field),
        "passes": [{"high": p.high, "low": p.low, "count": p.count} for p in field.passes],
        "mask": str(mask_path),
        "points": str(pts_path),
    }


def cmd_match(args, loss_cfg, canny_cfg):
    tpl = build_template(load_pgm(args.template), canny_cfg)
    src = load_pgm(args.source)
    results = match_search(
        tpl,
        src,
        angle_range=(math.radians(args.angle_lo), math.radians(args.angle_hi)),
        angle_step=math.radians(args.angle_step),
        score_min=args.score_min,
    )
    if args.overlay:
        canvas = src.data.copy()
        for m in results:
            dx, dy, _, _ = _posed(tpl, m.angle)
            xs = np.rint(m.c + dx).astype(int)
            ys = np.rint(m.r + dy).astype(int)
            ok = (xs >= 0) & (xs < src.width) & (ys >= 0) & (ys < src.height)
            canvas[ys[ok], xs[ok]] = 255.0
        write_pgm(_out_dir(args) / args.overlay, GrayImage(canvas))
    return [m.to_json(tpl) for m in results]


def _synthetic_case(args):
    rng = np.random.default_rng(args.seed)
    spec = random_rect_scene(rng, noise_sigma=args.noise)
    img, (gt,) = render_scene(spec, seed=args.seed)
    init = perturb(gt, rng, args.shift, args.scale, args.rot)
    return img, gt, init


def cmd_fit(args, loss_cfg, canny_cfg):
    if args.image:
        if not (args.gt and args.init):
            raise ArgumentError("--image needs --gt and --init")
        img = load_pgm(args.image)
        gt = OrientedBox.from_json(_json_arg(args.gt))
        init = OrientedBox.from_json(_json_arg(args.init))
    else:
        img, gt, init = _synthetic_case(args)
    res = fitter.fit_box(img, gt, init, variant(loss_cfg, args.variant), canny=canny_cfg)
    rec = res.to_json()
    rec.update({"gt": gt.to_json(), "init": init.to_json(), "variant": args.variant})
    if args.trace:
        trace = [
            {"params": p.tolist(), "loss": loss, "grad_norm": g}
            for p, loss, g in zip(res.trace.params, res.trace.loss, res.trace.grad_norm)
        ]
        _write_json(_out_dir(args) / args.trace, trace)
    return rec


def cmd_bench(args, loss_cfg, canny_cfg):
    return fitter.run_benchmark(
        n_scenes=args.scenes,
        perturbation=fitter.Perturbation(args.shift, args.scale, args.rot),
        seed=args.seed,
        variants=tuple(args.variants.split(",")),
        cfg=loss_cfg,
        noise_sigma=args.noise,
        canny=canny_cfg,
    )


def cmd_gradcheck(args, loss_cfg, canny_cfg):
    rep = grad_check(trials=args.trials, seed=args.seed, cfg=loss_cfg, canny=canny_cfg)
    rec = rep.to_json()
    rec["tolerance"] = args.tol
    rec["pass"] = all(v < args.tol for v in rep.max_rel_err.values())
    return rec


def cmd_attend(args, loss_cfg, canny_cfg):
    img = load_pgm(args.image)
    ep = build_edge_pyramid(edge_mask(adaptive_canny(img, canny_cfg)))
    if args.tensors:
        fp = attention.load_pyramid(args.tensors)
    else:
        fp = attention.synthetic_pyramid(np.random.default_rng(args.seed), args.channels, img.dims, positive=True)
    attended = attention.apply_edge_attention(fp, ep)
    out = _out_dir(args)
    rec = {
        "attended": [str(p) for p in attention.save_pyramid(attended, out, "attended")],
        "report": attention.attention_report(fp, ep),
    }
    if args.weights:
        w = attention.FusionWeights.from_json(_json_arg(args.weights))
        fused = attention.fuse_scheme2(fp, attended, w)
        rec["fused"] = [str(p) for p in attention.save_pyramid(fused, out, "fused")]
    return rec


def cmd_convert(args, loss_cfg, canny_cfg):
    out = _out_dir(args)
    summary = []
    for path in args.annotations:
        records, skipped = convert_le90(parse_dota(path))
        dest = out / f"{Path(path).stem}_le90.json"
        _write_json(dest, records)
        summary.append({"source": str(path), "output": str(dest), "converted": len(records), "skipped": skipped})
    return summary


def cmd_crop(args, loss_cfg, canny_cfg):
    img = load_pgm(args.image)
    plan = plan_crops(img.dims, args.window, args.overlap)
    rec = plan.to_json()
    if not args.plan_only:
        out = _out_dir(args)
        stem = Path(args.image).stem
        files = []
        for origin in plan.windows:
            x0, y0, x1, y1 = plan.extent(origin)
            p = out / f"{stem}_{x0}_{y0}.pgm"
            write_pgm(p, GrayImage(img.data[y0:y1, x0:x1]))
            files.append(str(p))
        rec["files"] = files
    return rec


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="edgeobb", description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="JSON file with LossConfig and/or CannyConfig fields")
    ap.add_argument("--out-dir", default=".", help="directory for written files")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("edges", help="adaptive Canny; writes the edge mask PGM and edge points JSONL")
    p.add_argument("image")
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("match", help="rotational template matching")
    p.add_argument("--template", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--angle-lo", type=float, default=-180.0, help="degrees")
    p.add_argument("--angle-hi", type=float, default=180.0, help="degrees")
    p.add_argument("--angle-step", type=float, default=2.0, help="degrees")
    p.add_argument("--score-min", type=float, default=0.7)
    p.add_argument("--overlay", help="file name of an overlay PGM under --out-dir")
    p.set_defaults(func=cmd_match)

    def perturbation_flags(p):
        p.add_argument("--shift", type=float, default=5.0, help="max center shift, px")
        p.add_argument("--scale", type=float, default=0.10, help="max relative size change")
        p.add_argument("--rot", type=float, default=10.0, help="max rotation, degrees")
        p.add_argument("--noise", type=float, default=0.0, help="scene noise sigma")

    p = sub.add_parser("fit", help="fit one box; synthetic scene unless --image is given")
    p.add_argument("--image")
    p.add_argument("--gt", help="JSON box record or file")
    p.add_argument("--init", help="JSON box record or file")
    p.add_argument("--variant", default="normalized", choices=("literal", "normalized", "rotation_compensated", "per_point"))
    p.add_argument("--trace", help="file name for the per-iteration trace under --out-dir")
    perturbation_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="fit benchmark over random rectangle scenes")
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--variants", default=",".join(fitter.VARIANTS))
    perturbation_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference Edge-Loss gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attend", help="edge attention on a feature pyramid")
    p.add_argument("--image", required=True)
    p.add_argument("--tensors", nargs=5, help="five raw tensor files, finest level first")
    p.add_argument("--channels", type=int, default=8, help="channels of the synthetic pyramid")
    p.add_argument("--weights", help="fusion weights JSON {matrices, biases}")
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("convert", help="DOTA text annotations to LE90 JSON")
    p.add_argument("annotations", nargs="+")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("crop", help="sliding-window crops")
    p.add_argument("image")
    p.add_argument("--window", type=int, default=CROP_WINDOW)
    p.add_argument("--overlap", type=int, default=CROP_OVERLAP)
    p.add_argument("--plan-only", action="store_true")
    p.set_defaults(func=cmd_crop)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        loss_cfg, canny_cfg = load_configs(args.config)
        result = args.func(args, loss_cfg, canny_cfg)
    except (EdgeObbError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, ArgumentError) else 1
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
