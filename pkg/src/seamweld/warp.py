"""
Placing the second image on the first image's canvas.

Homographies map source (I1) pixel coordinates to reference (I0) pixel
coordinates, with (x, y) = (column, row) and pixel centers at integers.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateHomographyError, NoOverlapError
from .imgcore import ImageBuffer

_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class Homography:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise DegenerateHomographyError("homography must be a finite 3x3 matrix")
        if m[2, 2] != 0.0:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateHomographyError("homography is singular")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def apply(self, x, y):
        """Map point arrays; returns (x', y', w) before division is undone."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.m
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
        v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            return u / w, v / w, w


def load_homography(path: str | os.PathLike) -> Homography:
    """Nine whitespace-separated decimals, row-major."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) != 9:
        raise DegenerateHomographyError(f"{path}: expected 9 numbers, found {len(tokens)}")
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise DegenerateHomographyError(f"{path}: {exc}") from exc
    return Homography(np.array(values).reshape(3, 3))


class Warped(NamedTuple):
    image: ImageBuffer
    mask: np.ndarray
    origin: tuple[int, int]  # reference coordinates (x, y) of canvas pixel (0, 0)


@dataclass(frozen=True, eq=False)
class AlignedPair:
    img0: ImageBuffer
    img1: ImageBuffer
    mask0: np.ndarray
    mask1: np.ndarray

    def __post_init__(self):
        shape = self.img0.shape
        for name in ("img1", "mask0", "mask1"):
            other = getattr(self, name)
            got = other.shape if isinstance(other, ImageBuffer) else np.shape(other)
            if tuple(got[:2]) != tuple(shape):
                raise ValueError(f"{name} shape {got} differs from canvas {shape}")
        for name in ("mask0", "mask1"):
            m = np.array(getattr(self, name), dtype=bool)
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.img0.shape

    @property
    def overlap(self) -> np.ndarray:
        return self.mask0 & self.mask1

    @property
    def union(self) -> np.ndarray:
        return self.mask0 | self.mask1


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


def warped_area(src_shape, h: Homography) -> float:
    """Area of the source's pixel extent [-1/2, w - 1/2] x [-1/2, h - 1/2] after mapping."""
    sh, sw = src_shape
    cx = np.array([-0.5, sw - 0.5, sw - 0.5, -0.5])
    cy = np.array([-0.5, -0.5, sh - 0.5, sh - 0.5])
    x, y, _ = h.apply(cx, cy)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _check_area(src_shape, h: Homography) -> None:
    area = warped_area(src_shape, h)
    if not area >= 1.0:
        raise DegenerateHomographyError(f"warped area {area:.3g} is below one pixel")


def _canvas_bounds(src_shape, h: Homography, ref_shape):
    sh, sw = src_shape
    rh, rw = ref_shape
    cx = np.array([0, sw - 1, 0, sw - 1], dtype=np.float64)
    cy = np.array([0, 0, sh - 1, sh - 1], dtype=np.float64)
    wx, wy, ww = h.apply(cx, cy)
    if np.any(ww <= 0) or not np.all(np.isfinite(wx)) or not np.all(np.isfinite(wy)):
        raise DegenerateHomographyError("source corners map through the line at infinity")
    wx, wy = _snap(wx), _snap(wy)
    x_lo = math.floor(min(0.0, wx.min()))
    y_lo = math.floor(min(0.0, wy.min()))
    x_hi = math.ceil(max(rw - 1.0, wx.max()))
    y_hi = math.ceil(max(rh - 1.0, wy.max()))
    return x_lo, y_lo, x_hi - x_lo + 1, y_hi - y_lo + 1


def _bilinear(plane: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = plane.shape[:2]
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    if plane.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
    bottom = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def _sample(src: ImageBuffer, h: Homography, origin, canvas_shape):
    ox, oy = origin
    ch, cw = canvas_shape
    gy, gx = np.mgrid[0:ch, 0:cw].astype(np.float64)
    sx, sy, sw = h.inverse().apply(gx + ox, gy + oy)
    ok = (sw > 0) & np.isfinite(sx) & np.isfinite(sy)
    sx = _snap(np.where(ok, sx, -1.0))
    sy = _snap(np.where(ok, sy, -1.0))
    height, width = src.shape
    ok &= (sx >= 0) & (sx <= width - 1) & (sy >= 0) & (sy <= height - 1)
    # a zero-weight tap never counts against support
    support = _bilinear(src.valid().astype(np.float64), sx, sy)
    ok &= support >= 1.0 - 1e-9
    pixels = _bilinear(src.pixels, sx, sy)
    pixels = np.clip(np.where(ok[..., None], pixels, 0.0), 0.0, 1.0)
    return pixels, ok


def warp_image(src: ImageBuffer, h: Homography, ref_shape: tuple[int, int] | None = None) -> Warped:
    """Inverse-map ``src`` through ``h`` with bilinear sampling.

    The canvas is the bounding box of the reference frame (``ref_shape``,
    default: the source's own shape) and the warped source corners. A canvas
    pixel is valid only when every bilinear tap with nonzero weight lies
    inside the source footprint.
    """
    ref_shape = src.shape if ref_shape is None else ref_shape
    x_lo, y_lo, cw, ch = _canvas_bounds(src.shape, h, ref_shape)
    _check_area(src.shape, h)
    pixels, mask = _sample(src, h, (x_lo, y_lo), (ch, cw))
    if not mask.any():
        raise DegenerateHomographyError("warped footprint collapses to less than one pixel")
    return Warped(ImageBuffer(pixels, mask), mask, (x_lo, y_lo))


def _place(img: ImageBuffer, origin, canvas_shape):
    ox, oy = origin
    ch, cw = canvas_shape
    pixels = np.zeros((ch, cw, 3))
    mask = np.zeros((ch, cw), dtype=bool)
    r0, c0 = -oy, -ox
    valid = img.valid()
    pixels[r0 : r0 + img.height, c0 : c0 + img.width] = np.where(valid[..., None], img.pixels, 0.0)
    mask[r0 : r0 + img.height, c0 : c0 + img.width] = valid
    return pixels, mask


def make_aligned_pair(
    img0: ImageBuffer,
    img1: ImageBuffer,
    h: Homography | None = None,
    masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> AlignedPair:
    """Put both images on one canvas.

    With ``h``, img0 is the reference frame and img1 is warped onto it. Without
    ``h`` the images must already share a canvas; footprints come from
    ``masks`` or, failing that, from the images' own masks.
    """
    if h is not None:
        x_lo, y_lo, cw, ch = _canvas_bounds(img1.shape, h, img0.shape)
        _check_area(img1.shape, h)
        p0, m0 = _place(img0, (x_lo, y_lo), (ch, cw))
        p1, m1 = _sample(img1, h, (x_lo, y_lo), (ch, cw))
        if not m1.any():
            raise DegenerateHomographyError("warped footprint collapses to less than one pixel")
    else:
        if img0.shape != img1.shape:
            raise ValueError("without a homography both images must share one canvas")
        if masks is None:
            m0, m1 = img0.valid(), img1.valid()
        else:
            m0, m1 = (np.asarray(m, dtype=bool) for m in masks)
        p0 = np.where(m0[..., None], img0.pixels, 0.0)
        p1 = np.where(m1[..., None], img1.pixels, 0.0)
    if not np.any(m0 & m1):
        raise NoOverlapError("the two footprints do not overlap")
    return AlignedPair(ImageBuffer(p0, m0), ImageBuffer(p1, m1), m0, m1)
