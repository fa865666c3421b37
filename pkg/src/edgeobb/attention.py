"""Edge self-attention on feature pyramids and the second fusion scheme.

Attention multiplies every channel of a pyramid level by the matching edge
mask level. Fusion concatenates the attended and original features and maps
them back to C channels with a fixed per-pixel linear layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .edges import PYRAMID_LEVELS, EdgePyramid
from .errors import DimensionError
from .imagecore import FeatureMap, read_tensor, write_tensor


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple[FeatureMap, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) != PYRAMID_LEVELS:
            raise DimensionError(f"feature pyramid needs {PYRAMID_LEVELS} levels, got {len(levels)}")
        chans = levels[0].channels
        for i in range(1, len(levels)):
            prev, cur = levels[i - 1], levels[i]
            if cur.channels != chans:
                raise DimensionError(f"level {i + 1} has {cur.channels} channels, expected {chans}")
            want = (math.ceil(prev.height / 2), math.ceil(prev.width / 2))
            if (cur.height, cur.width) != want:
                raise DimensionError(f"level {i + 1} is {cur.height}x{cur.width}, expected {want[0]}x{want[1]}")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    def dims(self) -> list[tuple[int, int]]:
        return [(f.width, f.height) for f in self.levels]


@dataclass(frozen=True)
class FusionWeights:
    # Per level: (C, 2C) matrix acting on concat(attended, original), and a (C,) bias.
    matrices: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=np.float64) for m in self.matrices)
        bias = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(mats) != len(bias):
            raise DimensionError("one bias per fusion matrix is required")
        for m, b in zip(mats, bias):
            if m.ndim != 2 or m.shape[1] != 2 * m.shape[0]:
                raise DimensionError(f"fusion matrix must be C x 2C, got {m.shape}")
            if b.shape != (m.shape[0],):
                raise DimensionError(f"bias must have shape ({m.shape[0]},), got {b.shape}")
            if not (np.isfinite(m).all() and np.isfinite(b).all()):
                raise ValueError("fusion weights must be finite")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "biases", bias)

    @classmethod
    def blockwise(cls, channels: int, a: float, b: float, levels: int = PYRAMID_LEVELS) -> "FusionWeights":
        """``[a*I | b*I]`` with zero bias on every level."""
        eye = np.eye(channels)
        mat = np.hstack([a * eye, b * eye])
        return cls(tuple(mat.copy() for _ in range(levels)), tuple(np.zeros(channels) for _ in range(levels)))

    @classmethod
    def averaging(cls, channels: int, levels: int = PYRAMID_LEVELS) -> "FusionWeights":
        return cls.blockwise(channels, 0.5, 0.5, levels)

    @classmethod
    def projection(cls, channels: int, levels: int = PYRAMID_LEVELS) -> "FusionWeights":
        """Keeps the original half of the concatenation only."""
        return cls.blockwise(channels, 0.0, 1.0, levels)

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, levels: int = PYRAMID_LEVELS) -> "FusionWeights":
        mats = tuple(rng.normal(0, 1 / math.sqrt(2 * channels), (channels, 2 * channels)) for _ in range(levels))
        return cls(mats, tuple(rng.normal(0, 0.1, channels) for _ in range(levels)))

    @classmethod
    def from_json(cls, obj: dict) -> "FusionWeights":
        return cls(tuple(np.array(m) for m in obj["matrices"]), tuple(np.array(b) for b in obj["biases"]))


def _check_edge_dims(fp: FeaturePyramid, ep: EdgePyramid) -> None:
    if len(ep) != len(fp):
        raise DimensionError(f"edge pyramid has {len(ep)} levels, feature pyramid {len(fp)}")
    for i, (f, e) in enumerate(zip(fp.levels, ep.levels)):
        if (f.width, f.height) != e.dims:
            raise DimensionError(f"level {i + 1}: features {f.width}x{f.height} vs edges {e.width}x{e.height}")


def apply_edge_attention(fp: FeaturePyramid, ep: EdgePyramid) -> FeaturePyramid:
    """Y_i = E_i * F_i, the edge map broadcast over channels."""
    _check_edge_dims(fp, ep)
    return FeaturePyramid(tuple(FeatureMap(e.data[None] * f.data) for f, e in zip(fp.levels, ep.levels)))


def fuse_scheme2(original: FeaturePyramid, attended: FeaturePyramid, w: FusionWeights) -> FeaturePyramid:
    """Per pixel: ``matrix @ concat(attended, original) + bias``."""
    if original.dims() != attended.dims() or original.channels != attended.channels:
        raise DimensionError("original and attended pyramids differ in shape")
    if len(w.matrices) != len(original):
        raise DimensionError(f"{len(w.matrices)} fusion matrices for {len(original)} levels")
    out = []
    for o, a, m, b in zip(original.levels, attended.levels, w.matrices, w.biases):
        c = o.channels
        if m.shape[0] != c:
            raise DimensionError(f"fusion matrix is for {m.shape[0]} channels, features have {c}")
        y = np.einsum("kc,chw->khw", m[:, :c], a.data) + np.einsum("kc,chw->khw", m[:, c:], o.data)
        out.append(FeatureMap(y + b[:, None, None]))
    return FeaturePyramid(tuple(out))


def attention_report(fp: FeaturePyramid, ep: EdgePyramid, split: float = 0.5) -> list[dict]:
    """Mean |Y| on edge (E > split) vs non-edge pixels, per level.

    A level is flagged degenerate, with ratio 0, when either region is empty
    or the non-edge mean is zero.
    """
    attended = apply_edge_attention(fp, ep)
    rows = []
    for i, (y, e) in enumerate(zip(attended.levels, ep.levels)):
        mag = np.abs(y.data).mean(axis=0)
        edge = e.data > split
        n_edge, n_rest = int(edge.sum()), int((~edge).sum())
        m_edge = float(mag[edge].mean()) if n_edge else 0.0
        m_rest = float(mag[~edge].mean()) if n_rest else 0.0
        degenerate = n_edge == 0 or n_rest == 0 or m_rest == 0.0
        rows.append(
            {
                "level": i + 1,
                "edge_mean": m_edge,
                "non_edge_mean": m_rest,
                "ratio": 0.0 if degenerate else m_edge / m_rest,
                "degenerate": degenerate,
                "edge_pixels": n_edge,
                "non_edge_pixels": n_rest,
            }
        )
    return rows


def pyramid_dims(width: int, height: int, levels: int = PYRAMID_LEVELS) -> list[tuple[int, int]]:
    """Level sizes (w, h) obtained by halving ``(width, height)`` with ceil, excluding the base."""
    out = []
    for _ in range(levels):
        width, height = math.ceil(width / 2), math.ceil(height / 2)
        out.append((width, height))
    return out


def synthetic_pyramid(
    rng: np.random.Generator, channels: int, base: tuple[int, int], positive: bool = False
) -> FeaturePyramid:
    """Random features sized to pair with the edge pyramid of a ``base`` (w, h) image."""
    levels = []
    for w, h in pyramid_dims(*base):
        data = rng.uniform(0.1, 1.0, (channels, h, w)) if positive else rng.normal(0.0, 1.0, (channels, h, w))
        levels.append(FeatureMap(data))
    return FeaturePyramid(tuple(levels))


def load_pyramid(paths) -> FeaturePyramid:
    return FeaturePyramid(tuple(read_tensor(p) for p in paths))


def save_pyramid(fp: FeaturePyramid, out_dir, stem: str = "level") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(fp.levels, start=1):
        p = out_dir / f"{stem}{i}.f32"
        write_tensor(p, f)
        paths.append(p)
    return paths
