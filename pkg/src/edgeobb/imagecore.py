"""Raster containers, PGM / raw-tensor I/O and the small kernels everything else uses.

Coordinates follow the image convention: ``x`` is the column, ``y`` the row
(pointing down), and pixel ``(x, y)`` has its center at integer coordinates.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, FormatError, TruncatedDataError, UnsupportedError

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class GrayImage:
    """Single-channel raster, ``data`` has shape ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True)
class VectorField:
    """Per-pixel 2-D vectors (typically image gradients)."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        gx = np.asarray(self.gx, dtype=np.float64)
        gy = np.asarray(self.gy, dtype=np.float64)
        if gx.shape != gy.shape or gx.ndim != 2:
            raise DimensionError(f"gx/gy shape mismatch: {gx.shape} vs {gy.shape}")
        gx.setflags(write=False)
        gy.setflags(write=False)
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)

    @property
    def width(self) -> int:
        return self.gx.shape[1]

    @property
    def height(self) -> int:
        return self.gx.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


@dataclass(frozen=True)
class FeatureMap:
    """Channel-major activations, ``data`` has shape ``(channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimensionError(f"FeatureMap needs a non-empty 3-D array, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull ``count`` whitespace-separated tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("unexpected end of PGM header")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise FormatError("PGM header must end with a single whitespace byte")
    return tokens, pos + 1


def decode_pgm(buf: bytes) -> GrayImage:
    if buf[:2] != b"P5":
        if buf[:1] == b"P" and buf[1:2].isdigit():
            raise FormatError(f"unsupported PNM variant {buf[:2].decode()!r}; only binary P5 is read")
        raise FormatError("missing P5 magic")
    tokens, offset = _read_header_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"non-integer PGM header field: {exc}") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedError(f"maxval {maxval} unsupported; only 8-bit (255) PGM is read")
    payload = buf[offset:]
    need = width * height
    if len(payload) < need:
        raise TruncatedDataError(f"PGM payload has {len(payload)} bytes, expected {need}")
    data = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(height, width)
    return GrayImage(data.astype(np.float64))


def load_pgm(path) -> GrayImage:
    """Read an 8-bit binary PGM (P5). Values are copied verbatim, no scaling."""
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def encode_pgm(img: GrayImage) -> bytes:
    data = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + data.tobytes()


def write_pgm(path, img: GrayImage) -> None:
    """Write ``img`` as P5; values are rounded and clipped to [0, 255]."""
    atomic_write(path, encode_pgm(img))


def write_tensor(path, fmap: FeatureMap) -> None:
    """Raw tensor: little-endian u32 channels, width, height, then float32 data."""
    header = struct.pack("<III", fmap.channels, fmap.width, fmap.height)
    atomic_write(path, header + fmap.data.astype("<f4").tobytes())


def read_tensor(path) -> FeatureMap:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise TruncatedDataError("tensor file shorter than its 12-byte header")
    c, w, h = struct.unpack("<III", buf[:12])
    need = 4 * c * w * h
    if len(buf) - 12 < need:
        raise TruncatedDataError(f"tensor payload has {len(buf) - 12} bytes, expected {need}")
    data = np.frombuffer(buf[12 : 12 + need], dtype="<f4").reshape(c, h, w)
    return FeatureMap(data.astype(np.float64))


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------


def sobel_gradients(img: GrayImage) -> VectorField:
    """3x3 Sobel responses with replicate borders.

    ``gx`` is positive where intensity increases to the right, ``gy`` where it
    increases downward.
    """
    if img.width < 3 or img.height < 3:
        raise DimensionError(f"Sobel needs at least 3x3, got {img.width}x{img.height}")
    gx = ndimage.correlate(img.data, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(img.data, SOBEL_Y, mode="nearest")
    return VectorField(gx, gy)


def max_pool_2x2(img: GrayImage) -> GrayImage:
    """Stride-2 max pooling; partial blocks at the right/bottom are clipped."""
    if img.width < 2 or img.height < 2:
        raise DimensionError(f"2x2 pooling needs at least 2x2, got {img.width}x{img.height}")
    h, w = img.data.shape
    ph, pw = h + (h % 2), w + (w % 2)
    padded = np.full((ph, pw), -np.inf)
    padded[:h, :w] = img.data
    pooled = padded.reshape(ph // 2, 2, pw // 2, 2).max(axis=(1, 3))
    return GrayImage(pooled)


def sample_many(field: VectorField, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear lookup of ``field`` at arbitrary ``(xs, ys)``.

    Points outside ``[0, w-1] x [0, h-1]`` yield the zero vector.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = field.gx.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    out = []
    for comp in (field.gx, field.gy):
        val = w00 * comp[y0, x0] + w10 * comp[y0, x1] + w01 * comp[y1, x0] + w11 * comp[y1, x1]
        out.append(np.where(inside, val, 0.0))
    return out[0], out[1]


def bilinear_sample(field: VectorField, x: float, y: float) -> tuple[float, float]:
    gx, gy = sample_many(field, x, y)
    return float(gx), float(gy)
