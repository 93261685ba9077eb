"""Parametric infrared light-spot model and image synthesis.

A spot is a radially symmetric Gaussian footprint: its brightness at pixel
(x, y) is ``s * kernel(d2, sigma)`` with ``d2 = (px-x)^2 + (py-y)^2``. The
default kernel is peak-normalized, ``exp(-d2 / (2 sigma^2))``, so the center
brightness of a spot equals its amplification coefficient ``s`` exactly. The
kernel is injectable for experimentation with other attenuation profiles.

A perturbation is the accumulated field of all spots, tinted by a fixed
per-channel ratio (the camera's RGB response to infrared) and scaled by a
global amplification ``amp``:

    synthesized = base + amp * colorize(sum_i field_i)

Synthesis never clamps; clamping happens at export / oracle boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .validation import ValidationError, check_image

__all__ = [
    "DEFAULT_COLOR_RATIO",
    "SpotParams",
    "PerturbationConfig",
    "gaussian_peak_kernel",
    "gaussian_pdf_of_d2_kernel",
    "spot_brightness",
    "render_field",
    "colorize",
    "synthesize",
    "spot_jacobian",
    "half_brightness_radius",
]

# Measured per-channel camera response to 850nm infrared, R:G:B.
DEFAULT_COLOR_RATIO = (0.0852, 0.0533, 0.1521)

# Spots may sit partially off the face; centers are allowed to leave the
# canvas by this many standard deviations.
CANVAS_MARGIN_SIGMAS = 3.0


def gaussian_peak_kernel(d2, sigma: float):
    """Peak-normalized Gaussian attenuation: 1 at the center, in (0, 1] elsewhere."""
    return np.exp(-np.asarray(d2, dtype=np.float64) / (2.0 * sigma * sigma))


def gaussian_pdf_of_d2_kernel(d2, sigma: float):
    """Normal pdf evaluated at the squared distance (alternate attenuation profile)."""
    d2 = np.asarray(d2, dtype=np.float64)
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    return norm * np.exp(-(d2 * d2) / (2.0 * sigma * sigma))


def half_brightness_radius(sigma: float) -> float:
    """Radius where the default kernel drops to half its center value."""
    return sigma * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class SpotParams:
    """One light spot: continuous center (px, py), spread sigma, brightness s."""

    px: float
    py: float
    sigma: float
    s: float

    def validate(self, height: int | None = None, width: int | None = None,
                 field_name: str = "spot") -> None:
        for attr in ("px", "py", "sigma", "s"):
            if not math.isfinite(getattr(self, attr)):
                raise ValidationError(f"{field_name}.{attr} must be finite",
                                      field=f"{field_name}.{attr}")
        if self.sigma <= 0:
            raise ValidationError(f"{field_name}.sigma must be > 0, got {self.sigma}",
                                  field=f"{field_name}.sigma")
        if self.s < 0:
            raise ValidationError(f"{field_name}.s must be >= 0, got {self.s}",
                                  field=f"{field_name}.s")
        if height is not None and width is not None:
            margin = CANVAS_MARGIN_SIGMAS * self.sigma
            if not (-margin <= self.px <= (width - 1) + margin):
                raise ValidationError(
                    f"{field_name}.px={self.px} outside canvas + {margin:.1f}px margin",
                    field=f"{field_name}.px")
            if not (-margin <= self.py <= (height - 1) + margin):
                raise ValidationError(
                    f"{field_name}.py={self.py} outside canvas + {margin:.1f}px margin",
                    field=f"{field_name}.py")

    def to_dict(self) -> dict:
        return {"px": self.px, "py": self.py, "sigma": self.sigma, "s": self.s}

    @classmethod
    def from_dict(cls, d: dict) -> "SpotParams":
        try:
            return cls(px=float(d["px"]), py=float(d["py"]),
                       sigma=float(d["sigma"]), s=float(d["s"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed spot entry: {d!r}") from exc


@dataclass(frozen=True)
class PerturbationConfig:
    """Full perturbation: global amplification plus an ordered spot list."""

    amp: float
    spots: tuple[SpotParams, ...]
    color_ratio: tuple[float, float, float] = DEFAULT_COLOR_RATIO

    def __post_init__(self):
        object.__setattr__(self, "spots", tuple(self.spots))
        object.__setattr__(self, "color_ratio", tuple(float(c) for c in self.color_ratio))

    def validate(self, height: int | None = None, width: int | None = None) -> None:
        if not math.isfinite(self.amp) or self.amp < 0:
            raise ValidationError(f"amp must be >= 0, got {self.amp}", field="amp")
        if len(self.spots) < 1:
            raise ValidationError("spot list must not be empty", field="spots")
        if len(self.color_ratio) != 3 or any(
                not math.isfinite(c) or c <= 0 for c in self.color_ratio):
            raise ValidationError(
                f"color_ratio must be three positive numbers, got {self.color_ratio}",
                field="color_ratio")
        for i, spot in enumerate(self.spots):
            spot.validate(height, width, field_name=f"spots[{i}]")

    def with_amp(self, amp: float) -> "PerturbationConfig":
        return replace(self, amp=amp)

    def to_dict(self) -> dict:
        return {
            "amp": self.amp,
            "color_ratio": list(self.color_ratio),
            "spots": [s.to_dict() for s in self.spots],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationConfig":
        if not isinstance(d, dict):
            raise ValidationError("perturbation config must be a JSON object")
        try:
            amp = float(d["amp"])
            spots = tuple(SpotParams.from_dict(s) for s in d["spots"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed perturbation config: {exc}") from exc
        ratio = d.get("color_ratio", DEFAULT_COLOR_RATIO)
        return cls(amp=amp, spots=spots, color_ratio=tuple(float(c) for c in ratio))

    @classmethod
    def from_json(cls, text: str) -> "PerturbationConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def spot_brightness(spot: SpotParams, x, y, kernel=gaussian_peak_kernel):
    """Brightness contribution of one spot at (x, y); accepts scalars or arrays."""
    dx = spot.px - np.asarray(x, dtype=np.float64)
    dy = spot.py - np.asarray(y, dtype=np.float64)
    return spot.s * kernel(dx * dx + dy * dy, spot.sigma)


def _pixel_grid(height: int, width: int):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def render_field(config: PerturbationConfig, height: int, width: int,
                 kernel=gaussian_peak_kernel) -> np.ndarray:
    """Accumulated spot field on an (height, width) grid of pixel centers.

    Spots are summed in list order so results are bitwise reproducible.
    """
    xs, ys = _pixel_grid(height, width)
    out = np.zeros((height, width))
    for spot in config.spots:
        out += spot_brightness(spot, xs, ys, kernel=kernel)
    return out


def colorize(field: np.ndarray, ratio=DEFAULT_COLOR_RATIO) -> np.ndarray:
    """Tint a grayscale field into an RGB pixel delta with fixed channel ratios."""
    field = np.asarray(field, dtype=np.float64)
    out = np.empty(field.shape + (3,))
    for c in range(3):
        out[..., c] = ratio[c] * field
    return out


def synthesize(base, config: PerturbationConfig, kernel=gaussian_peak_kernel) -> np.ndarray:
    """Apply the perturbation to a base image. Values are NOT clamped."""
    base = check_image(base, "base")
    h, w = base.shape[:2]
    config.validate()
    delta = config.amp * colorize(render_field(config, h, w, kernel=kernel),
                                  config.color_ratio)
    return base + delta


def param_names(n_spots: int) -> list[str]:
    """Flat parameter layout used by jacobians and the optimizer:
    [amp, px_0, py_0, sigma_0, s_0, px_1, ...]."""
    names = ["amp"]
    for i in range(n_spots):
        names += [f"spots[{i}].px", f"spots[{i}].py", f"spots[{i}].sigma", f"spots[{i}].s"]
    return names


def spot_jacobian(base, config: PerturbationConfig) -> np.ndarray:
    """Analytic partial derivatives of the synthesized image.

    Returns an array of shape (4n+1, H, W, 3): one pixel-delta slice per
    parameter in the :func:`param_names` order. Only the default
    peak-normalized kernel is supported.

    With b = s * exp(-d2 / (2 sigma^2)) and k = b / s:
        dI/damp   = colorize(sum_i b_i)
        dI/dpx    = amp * ratio_c * b * (x - px) / sigma^2
        dI/dpy    = amp * ratio_c * b * (y - py) / sigma^2
        dI/dsigma = amp * ratio_c * b * d2 / sigma^3
        dI/ds     = amp * ratio_c * k          (defined as k when s = 0)
    """
    base = check_image(base, "base")
    h, w = base.shape[:2]
    config.validate()
    xs, ys = _pixel_grid(h, w)
    n = len(config.spots)
    out = np.zeros((4 * n + 1, h, w, 3))
    ratio = config.color_ratio
    amp = config.amp

    total_field = np.zeros((h, w))
    for i, spot in enumerate(config.spots):
        dx = xs - spot.px
        dy = ys - spot.py
        d2 = dx * dx + dy * dy
        k = np.exp(-d2 / (2.0 * spot.sigma ** 2))
        b = spot.s * k
        total_field += b
        base_idx = 1 + 4 * i
        grads = {
            0: b * dx / spot.sigma ** 2,            # px
            1: b * dy / spot.sigma ** 2,            # py
            2: b * d2 / spot.sigma ** 3,            # sigma
            3: k,                                    # s
        }
        for off, g in grads.items():
            out[base_idx + off] = amp * colorize(g, ratio)
    out[0] = colorize(total_field, ratio)
    return out
