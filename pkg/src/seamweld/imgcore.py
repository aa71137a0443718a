"""
Image buffers, masks and lossless file I/O.

Colors are sRGB scaled to [0, 1]; no linearization happens anywhere. PNG goes
through OpenCV (8/16-bit, optional alpha), binary PPM (P6) is read and written
here directly so fixtures never need a codec.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import EmptyImageError, ImageReadError, ImageWriteError, UnsupportedFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
LUMA = np.array([0.299, 0.587, 0.114])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """H x W x 3 float raster in [0, 1] plus an optional validity mask.

    Both arrays are copied and made read-only on construction.
    """

    pixels: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise EmptyImageError("image has a zero dimension")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel values must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != px.shape[:2]:
                raise ValueError(f"mask shape {m.shape} does not match image {px.shape[:2]}")
            object.__setattr__(self, "mask", _frozen(m))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def valid(self) -> np.ndarray:
        """Validity mask, all-true when none is attached."""
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask


def quantize(values: np.ndarray, levels: int = 255) -> np.ndarray:
    """Map [0, 1] values to integers with round-half-away-from-zero."""
    q = np.floor(np.clip(values, 0.0, 1.0) * levels + 0.5)
    return q.astype(np.uint16 if levels > 255 else np.uint8)


def to_gray(buffer: ImageBuffer) -> np.ndarray:
    """Rec. 601 luma plane."""
    return buffer.pixels @ LUMA


def gray_to_buffer(plane: np.ndarray, mask: np.ndarray | None = None) -> ImageBuffer:
    plane = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return ImageBuffer(np.repeat(plane[:, :, None], 3, axis=2), mask)


def _read_bytes(path: str | os.PathLike) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc


def _parse_ppm(data: bytes, path) -> np.ndarray:
    # header: magic, width, height, maxval separated by whitespace; '#' comments allowed
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageReadError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageReadError(f"{path}: malformed PPM header") from exc
    if width == 0 or height == 0:
        raise EmptyImageError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise ImageReadError(f"{path}: bad PPM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * 3
    if len(data) - pos < count * dtype.itemsize:
        raise ImageReadError(f"{path}: truncated PPM raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return raster.reshape(height, width, 3).astype(np.float64) / maxval


def load_image(path: str | os.PathLike) -> ImageBuffer:
    """Read a PNG or binary PPM file into an ImageBuffer.

    A PNG alpha channel becomes the validity mask (nonzero alpha = valid).
    8-bit value v maps to v/255, 16-bit to v/65535.
    """
    data = _read_bytes(path)
    if data.startswith(b"P6"):
        return ImageBuffer(_parse_ppm(data, path))
    if not data.startswith(PNG_SIGNATURE):
        raise UnsupportedFormatError(f"{path}: not a PNG or binary PPM file")
    if len(data) >= 24 and data[12:16] == b"IHDR":
        if int.from_bytes(data[16:20], "big") == 0 or int.from_bytes(data[20:24], "big") == 0:
            raise EmptyImageError(f"{path}: zero-dimension image")
    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"{path}: PNG decoding failed")
    if raw.size == 0:
        raise EmptyImageError(f"{path}: zero-dimension image")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    mask = None
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        rgb = raw[:, :, 2::-1]
        mask = raw[:, :, 3] > 0
    elif raw.shape[2] == 3:
        rgb = raw[:, :, ::-1]
    else:
        raise UnsupportedFormatError(f"{path}: unsupported channel count {raw.shape[2]}")
    return ImageBuffer(rgb.astype(np.float64) / scale, mask)


def save_image(buffer: ImageBuffer, path: str | os.PathLike) -> None:
    """Write 8-bit lossless output; x is stored as round(255 x).

    The format follows the file suffix (.png or .ppm). PNG output carries an
    alpha channel only when the buffer has a mask with invalid pixels.
    """
    suffix = Path(path).suffix.lower()
    q = quantize(buffer.pixels)
    if suffix == ".ppm":
        h, w = buffer.shape
        payload = b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()
    elif suffix == ".png":
        bgr = q[:, :, ::-1]
        if buffer.mask is not None and not buffer.mask.all():
            alpha = np.where(buffer.mask, 255, 0).astype(np.uint8)
            bgr = np.dstack([bgr, alpha])
        ok, enc = cv2.imencode(".png", np.ascontiguousarray(bgr))
        if not ok:
            raise ImageWriteError(f"PNG encoding failed for {path}")
        payload = enc.tobytes()
    else:
        raise UnsupportedFormatError(f"{path}: output must be .png or .ppm")
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Mask file: any nonzero sample means inside."""
    data = _read_bytes(path)
    if not data.startswith(PNG_SIGNATURE):
        raise UnsupportedFormatError(f"{path}: masks must be PNG")
    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"{path}: PNG decoding failed")
    if raw.size == 0:
        raise EmptyImageError(f"{path}: zero-dimension mask")
    return raw > 0 if raw.ndim == 2 else np.any(raw > 0, axis=2)


def save_gray8(plane: np.ndarray, path: str | os.PathLike) -> None:
    """Write an H x W uint8 array as a single-channel PNG."""
    ok, enc = cv2.imencode(".png", np.ascontiguousarray(plane, dtype=np.uint8))
    if not ok:
        raise ImageWriteError(f"PNG encoding failed for {path}")
    try:
        Path(path).write_bytes(enc.tobytes())
    except OSError as exc:
        raise ImageWriteError(f"cannot write {path}: {exc}") from exc


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    save_gray8(np.where(mask, 255, 0), path)
