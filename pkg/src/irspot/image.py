"""Image loading, saving, and pixel arithmetic.

Images are float64 arrays of shape (H, W, 3) in RGB order with linear
intensities in [0, 1]. All arithmetic stays unclamped; clamping and 8-bit
quantization happen only in :func:`save_image` (and at the oracle boundary,
see :mod:`irspot.oracle`).

Supported file formats: PNG (8- or 16-bit, alpha ignored on load) and binary
PPM (P6, any maxval up to 65535). Format is picked by file extension.
"""

from __future__ import annotations

import functools
from pathlib import Path

import cv2
import numpy as np

from .validation import ValidationError, check_image, check_same_shape

__all__ = [
    "ImageIOError",
    "load_image",
    "save_image",
    "diff",
    "resize_bilinear",
    "quantize_u8",
]


class ImageIOError(OSError):
    """Raised for unreadable, unwritable, or unsupported image files."""


_PPM_EXTS = {".ppm", ".pnm"}
_PNG_EXTS = {".png"}


def load_image(path) -> np.ndarray:
    """Load a PNG or binary PPM file as a float64 RGB image in [0, 1].

    Intensities are scaled by the format's max value (255 for 8-bit,
    65535 for 16-bit PNG, the stored maxval for PPM). Grayscale files are
    replicated across the three channels; an alpha channel is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"cannot read image file: {path}")
    ext = path.suffix.lower()
    if ext in _PPM_EXTS:
        return _load_ppm(path)
    if ext in _PNG_EXTS:
        return _load_png(path)
    raise ImageIOError(f"unsupported image format '{ext}' (expected .png or .ppm)")


def _load_png(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"failed to decode PNG file: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(f"unsupported PNG sample type {raw.dtype} in {path}")
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.ndim == 3 and raw.shape[2] == 3:
        rgb = raw[:, :, ::-1]  # BGR -> RGB
    elif raw.ndim == 3 and raw.shape[2] == 4:
        rgb = raw[:, :, [2, 1, 0]]  # BGRA -> RGB, alpha dropped
    else:
        raise ImageIOError(f"unsupported PNG layout {raw.shape} in {path}")
    if rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise ImageIOError(f"zero-dimension image: {path}")
    img = rgb.astype(np.float64) / scale
    img.setflags(write=False)
    return img


def _load_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P6"):
        raise ImageIOError(f"not a binary PPM (P6) file: {path}")

    # Header: magic, width, height, maxval, separated by whitespace/comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageIOError(f"truncated PPM header: {path}")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageIOError(f"malformed PPM header: {path}") from exc
    if width < 1 or height < 1:
        raise ImageIOError(f"zero-dimension image: {path}")
    if not 0 < maxval < 65536:
        raise ImageIOError(f"PPM maxval {maxval} out of range: {path}")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * 3
    if len(data) - pos < count * dtype.itemsize:
        raise ImageIOError(f"truncated PPM pixel data: {path}")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    img = pixels.astype(np.float64).reshape(height, width, 3) / float(maxval)
    img.setflags(write=False)
    return img


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to uint8 with round-half-up."""
    clamped = np.clip(img, 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Clamp, quantize to 8-bit, and write PNG or PPM chosen by extension."""
    arr = check_image(img)
    path = Path(path)
    ext = path.suffix.lower()
    q = quantize_u8(arr)
    if ext in _PNG_EXTS:
        ok = cv2.imwrite(str(path), q[:, :, ::-1])
        if not ok:
            raise ImageIOError(f"failed to write PNG file: {path}")
    elif ext in _PPM_EXTS:
        header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
        try:
            path.write_bytes(header + q.tobytes())
        except OSError as exc:
            raise ImageIOError(f"failed to write PPM file: {path}") from exc
    else:
        raise ImageIOError(f"unsupported image format '{ext}' (expected .png or .ppm)")


def encode_png_bytes(img) -> bytes:
    """Clamp, quantize, and encode as PNG in memory (used for previews)."""
    arr = check_image(img)
    ok, buf = cv2.imencode(".png", quantize_u8(arr)[:, :, ::-1])
    if not ok:
        raise ImageIOError("failed to encode PNG preview")
    return buf.tobytes()


def decode_png_bytes(data: bytes) -> np.ndarray:
    """Decode in-memory PNG bytes to a float image (same scaling as load_image)."""
    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError("failed to decode PNG bytes")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(f"unsupported PNG sample type {raw.dtype}")
    if raw.ndim == 2:
        rgb = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.ndim == 3 and raw.shape[2] == 3:
        rgb = raw[:, :, ::-1]
    elif raw.ndim == 3 and raw.shape[2] == 4:
        rgb = raw[:, :, [2, 1, 0]]
    else:
        raise ImageIOError(f"unsupported PNG layout {raw.shape}")
    return rgb.astype(np.float64) / scale


def diff(on, off) -> np.ndarray:
    """Elementwise ``on - off`` without clamping (a pixel delta)."""
    on = check_image(on, "on")
    off = check_image(off, "off")
    check_same_shape(on, off)
    return on - off


@functools.lru_cache(maxsize=64)
def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D bilinear interpolation matrix (n_out x n_in), half-pixel centers."""
    mat = np.zeros((n_out, n_in))
    if n_in == 1:
        mat[:, 0] = 1.0
        mat.setflags(write=False)
        return mat
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat[np.arange(n_out), lo] += 1.0 - frac
    mat[np.arange(n_out), hi] += frac
    mat.setflags(write=False)
    return mat


def resize_bilinear(img, height: int, width: int) -> np.ndarray:
    """Bilinear resize (half-pixel-center convention) of a 2-D or (H, W, 3) array.

    A same-size call returns an identical copy. The operation is separable
    and exactly linear, so its adjoint is the transposed pair of
    interpolation matrices (relied on by the reference oracle's gradient).
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValidationError(f"expected 2-D or 3-D array, got shape {arr.shape}")
    if height < 1 or width < 1:
        raise ValidationError(f"target size must be >= 1, got {height}x{width}")
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr.copy()
    wy = _interp_matrix(height, arr.shape[0])
    wx = _interp_matrix(width, arr.shape[1])
    out = np.tensordot(wy, arr, axes=(1, 0))
    out = np.moveaxis(np.tensordot(wx, out, axes=(1, 1)), 0, 1)
    return out


def resize_adjoint(grad, height: int, width: int) -> np.ndarray:
    """Adjoint of :func:`resize_bilinear`: maps a gradient on the resized
    array back to a gradient on an array of the given original size."""
    arr = np.asarray(grad, dtype=np.float64)
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr.copy()
    wy = _interp_matrix(arr.shape[0], height)
    wx = _interp_matrix(arr.shape[1], width)
    out = np.tensordot(wy.T, arr, axes=(1, 0))
    out = np.moveaxis(np.tensordot(wx.T, out, axes=(1, 1)), 0, 1)
    return out
