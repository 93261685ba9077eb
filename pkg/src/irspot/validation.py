"""Input validation helpers shared across the toolkit.

Images are plain numpy arrays of shape (H, W, 3), float64, linear intensity.
Valid images keep values in [0, 1]; pixel deltas are the same shape but
unbounded. Validation never clamps -- clamping happens only at export and at
the oracle boundary.
"""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def as_float_array(arr, name: str = "array") -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite values", field=name)
    return out


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) float image. Returns the validated float64 array."""
    out = as_float_array(img, name)
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValidationError(
            f"{name} must have shape (H, W, 3), got {out.shape}", field=name
        )
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValidationError(f"{name} has a zero dimension: {out.shape}", field=name)
    return out


def check_pixel_delta(delta, name: str = "delta") -> np.ndarray:
    """Pixel deltas share the image shape but may be negative or exceed 1."""
    return check_image(delta, name)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive finite number, got {value}",
                              field=name)
    return value


def check_non_negative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be a non-negative finite number, got {value}",
                              field=name)
    return value
