"""Measure realized light spots against their computed targets.

Given two photos of the attacker (LEDs on and off) and the target
perturbation, the analyzer localizes every realized spot in the difference
image, compares its brightness and half-brightness size to what the model
predicts, and reports per-spot correction deltas: the offset from detected
toward theoretical center, a brightness verdict, and a size verdict.

Analysis runs on a spectrally matched luminance plane: channels of the
difference image are combined with the perturbation's color ratio
(normalized), so the filter is aligned with the spot model's own tint.
"""

from __future__ import annotations

import datetime
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .image import diff as image_diff
from .oracle import Embedding, OracleError, distance
from .spots import (
    DEFAULT_COLOR_RATIO,
    PerturbationConfig,
    SpotParams,
    colorize,
    half_brightness_radius,
    render_field,
    synthesize,
)
from .validation import ValidationError, check_image, check_pixel_delta, check_same_shape

__all__ = [
    "SpotFinding",
    "CalibrationReport",
    "locate_spot",
    "brightness_check",
    "size_check",
    "calibrate_once",
]

DEFAULT_SEARCH_RADIUS = 20
BRIGHTNESS_TOLERANCE = 0.15  # relative; +-15%
SIZE_TOLERANCE = 0.20        # relative; +-20%
# A correlation peak below 5x the window's mean background response (what a
# featureless patch of the window's average |luminance| would score, with the
# detected spot's own disk excluded) is flagged as a low-confidence match.
CONFIDENCE_RATIO = 5.0


@dataclass
class SpotFinding:
    spot_index: int
    found: bool
    detected_center: tuple[float, float] | None = None
    offset_vector: tuple[float, float] | None = None
    low_confidence: bool = False
    brightness_ratio_measured: float | None = None
    brightness_ratio_expected: float | None = None
    brightness_verdict: str | None = None  # too_bright | too_dim | ok
    half_radius_measured: float | None = None
    half_radius_expected: float | None = None
    size_verdict: str | None = None  # too_large | too_small | ok
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "spot_index": self.spot_index,
            "found": self.found,
            "detected_center": list(self.detected_center) if self.detected_center else None,
            "offset_vector": list(self.offset_vector) if self.offset_vector else None,
            "low_confidence": self.low_confidence,
            "brightness_ratio_measured": self.brightness_ratio_measured,
            "brightness_ratio_expected": self.brightness_ratio_expected,
            "brightness_verdict": self.brightness_verdict,
            "half_radius_measured": self.half_radius_measured,
            "half_radius_expected": self.half_radius_expected,
            "size_verdict": self.size_verdict,
            "warnings": self.warnings,
        }


@dataclass
class CalibrationReport:
    spots: list[SpotFinding]
    current_loss: float | None
    loss_error: str | None
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "current_loss": self.current_loss,
            "loss_error": self.loss_error,
            "spots": [s.to_dict() for s in self.spots],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def _ratio_luminance(delta: np.ndarray, color_ratio) -> np.ndarray:
    weights = np.asarray(color_ratio, dtype=np.float64)
    weights = weights / weights.sum()
    return (weights[0] * delta[:, :, 0] + weights[1] * delta[:, :, 1]
            + weights[2] * delta[:, :, 2])


def _sample_bilinear(plane: np.ndarray, x: float, y: float) -> float:
    h, w = plane.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = (1 - fx) * plane[y0, x0] + fx * plane[y0, x1]
    bot = (1 - fx) * plane[y1, x0] + fx * plane[y1, x1]
    return float((1 - fy) * top + fy * bot)


def locate_spot(diff, spot: SpotParams, search_radius: int = DEFAULT_SEARCH_RADIUS,
                color_ratio=None) -> SpotFinding:
    """Find the realized center of one spot in a difference image.

    Cross-correlates the spot's grayscale template (truncated at 3 sigma)
    against the ratio-weighted luminance of ``diff`` inside a window around
    the theoretical center. Ties go to the candidate closest to the
    theoretical center, then to row-major order. A peak that does not stand
    out from the window (see CONFIDENCE_RATIO) is flagged low-confidence.
    """
    diff = check_pixel_delta(diff, "diff")
    ratio = color_ratio if color_ratio is not None else DEFAULT_COLOR_RATIO
    finding = SpotFinding(spot_index=-1, found=False)
    if spot.s == 0.0:
        finding.warnings.append("spot has zero brightness coefficient")
        return finding

    h, w = diff.shape[:2]
    lum = _ratio_luminance(diff, ratio)

    radius = int(math.ceil(3.0 * spot.sigma))
    ts = np.arange(-radius, radius + 1, dtype=np.float64)
    tx, ty = np.meshgrid(ts, ts)
    template = np.exp(-(tx * tx + ty * ty) / (2.0 * spot.sigma ** 2))

    cx, cy = int(round(spot.px)), int(round(spot.py))
    x_lo, x_hi = cx - search_radius, cx + search_radius
    y_lo, y_hi = cy - search_radius, cy + search_radius
    if x_lo < 0 or y_lo < 0 or x_hi > w - 1 or y_hi > h - 1:
        finding.warnings.append("search window clipped to canvas")
    x_lo, x_hi = max(0, x_lo), min(w - 1, x_hi)
    y_lo, y_hi = max(0, y_lo), min(h - 1, y_hi)
    if x_lo > x_hi or y_lo > y_hi:
        finding.warnings.append("search window entirely off canvas")
        return finding

    # Zero-padded correlation over every candidate center in the window.
    pad = radius
    padded = np.zeros((h + 2 * pad, w + 2 * pad))
    padded[pad : pad + h, pad : pad + w] = lum
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, template.shape)[y_lo : y_hi + 1, x_lo : x_hi + 1]
    corr = np.einsum("yxuv,uv->yx", windows, template)

    peak = float(corr.max())
    if peak <= 0.0:
        # Spots only add light; without a positive response there is nothing
        # to localize (empty or fully explained-away window).
        finding.warnings.append("no positive response inside the search window")
        return finding

    ties = np.argwhere(corr == peak)
    best = None
    for dy_dx in ties:
        y, x = y_lo + int(dy_dx[0]), x_lo + int(dy_dx[1])
        d2 = (x - spot.px) ** 2 + (y - spot.py) ** 2
        key = (d2, y, x)
        if best is None or key < best[0]:
            best = (key, (float(x), float(y)))
    finding.found = True
    finding.detected_center = best[1]
    finding.offset_vector = (spot.px - best[1][0], spot.py - best[1][1])

    # Background response: |luminance| averaged over the searched region with
    # the detected spot's 2-sigma disk cut out, scaled by the template mass.
    bx, by = best[1]
    ys, xs = np.mgrid[0:h, 0:w]
    region = np.zeros((h, w), dtype=bool)
    region[max(0, y_lo - radius):min(h, y_hi + radius + 1),
           max(0, x_lo - radius):min(w, x_hi + radius + 1)] = True
    region &= (xs - bx) ** 2 + (ys - by) ** 2 > (2.0 * spot.sigma) ** 2
    background = float(np.abs(lum[region]).mean()) if region.any() else 0.0
    finding.low_confidence = peak < CONFIDENCE_RATIO * float(template.sum()) * background
    return finding


def _disk_mean(plane: np.ndarray, center: tuple[float, float], radius: float) -> float:
    h, w = plane.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius * radius
    if not mask.any():
        raise ValidationError("empty region: half-brightness disk covers no pixels")
    return float(plane[mask].mean())


def brightness_check(diff, on, spot: SpotParams, detected: tuple[float, float],
                     *, off, target: PerturbationConfig):
    """Compare realized and predicted spot brightness.

    Measured: mean luminance of ``diff`` within the spot's half-brightness
    radius of the detected center, divided by the mean luminance of the
    on-photo. Expected: the same statistic computed from a clean synthesis of
    the target over the off-photo. Verdict is ok within +-15% relative.
    """
    diff = check_pixel_delta(diff, "diff")
    on = check_image(on, "on")
    off = check_image(off, "off")
    ratio = target.color_ratio
    r_half = half_brightness_radius(spot.sigma)

    lum_diff = _ratio_luminance(diff, ratio)
    lum_on = _ratio_luminance(on, ratio)
    on_mean = float(lum_on.mean())
    if on_mean <= 0:
        raise ValidationError("on-photo has zero mean luminance")
    measured = _disk_mean(lum_diff, detected, r_half) / on_mean

    synth_on = np.clip(synthesize(off, target), 0.0, 1.0)
    synth_diff = synth_on - off
    expected = (_disk_mean(_ratio_luminance(synth_diff, ratio), (spot.px, spot.py), r_half)
                / float(_ratio_luminance(synth_on, ratio).mean()))
    if expected <= 0:
        raise ValidationError("target spot predicts zero brightness; cannot compare")

    rel = measured / expected
    if rel > 1.0 + BRIGHTNESS_TOLERANCE:
        verdict = "too_bright"
    elif rel < 1.0 - BRIGHTNESS_TOLERANCE:
        verdict = "too_dim"
    else:
        verdict = "ok"
    return measured, expected, verdict


_RAY_DIRECTIONS = [
    (math.cos(a), math.sin(a)) for a in (np.pi / 4 * k for k in range(8))
]


def size_check(diff, spot: SpotParams, detected: tuple[float, float],
               color_ratio=None):
    """Estimate the realized half-brightness radius along 8 rays.

    Walks outward from the detected center until luminance first drops below
    half the center value, interpolating the crossing radius; the median over
    rays is compared against sigma * sqrt(2 ln 2), ok within +-20% relative.
    """
    diff = check_pixel_delta(diff, "diff")
    ratio = color_ratio if color_ratio is not None else DEFAULT_COLOR_RATIO
    lum = _ratio_luminance(diff, ratio)
    cx, cy = detected
    center_value = _sample_bilinear(lum, cx, cy)
    if center_value <= 1e-9:
        raise ValidationError("center luminance is ~0; spot size not measurable")

    half = center_value / 2.0
    max_radius = 6.0 * spot.sigma
    step = 0.25
    crossings = []
    for ux, uy in _RAY_DIRECTIONS:
        prev_r, prev_v = 0.0, center_value
        r = step
        while r <= max_radius:
            v = _sample_bilinear(lum, cx + ux * r, cy + uy * r)
            if v < half:
                # Linear interpolation between the last two samples.
                t = (prev_v - half) / (prev_v - v) if prev_v != v else 0.0
                crossings.append(prev_r + t * (r - prev_r))
                break
            prev_r, prev_v = r, v
            r += step
    if len(crossings) < 4:
        raise ValidationError("half-brightness crossing found on fewer than half the rays")

    measured = float(np.median(crossings))
    expected = half_brightness_radius(spot.sigma)
    rel = measured / expected
    if rel > 1.0 + SIZE_TOLERANCE:
        verdict = "too_large"
    elif rel < 1.0 - SIZE_TOLERANCE:
        verdict = "too_small"
    else:
        verdict = "ok"
    return measured, expected, verdict


def calibrate_once(on, off, target: PerturbationConfig, victim_emb: Embedding | None,
                   oracle, *, search_radius: int = DEFAULT_SEARCH_RADIUS,
                   timestamp: str | None = None) -> CalibrationReport:
    """One full measurement pass: locate, brightness, and size for every spot,
    plus the live loss between the on-photo and the victim embedding.

    Deterministic and side-effect free for fixed inputs (pass ``timestamp``
    to pin the report header).
    """
    on = check_image(on, "on")
    off = check_image(off, "off")
    check_same_shape(on, off, "on/off photos")
    target.validate()

    delta = image_diff(on, off)
    findings: list[SpotFinding] = []
    for i, spot in enumerate(target.spots):
        # Localize each spot on the difference image with its siblings'
        # predicted contributions subtracted, so a brighter neighbor's skirt
        # cannot hijack the correlation peak inside the search window.
        siblings = tuple(sp for j, sp in enumerate(target.spots) if j != i)
        deflated = delta
        if siblings:
            sibling_cfg = PerturbationConfig(amp=target.amp, spots=siblings,
                                             color_ratio=target.color_ratio)
            h, w = delta.shape[:2]
            deflated = delta - target.amp * colorize(
                render_field(sibling_cfg, h, w), target.color_ratio)
        finding = locate_spot(deflated, spot, search_radius=search_radius,
                              color_ratio=target.color_ratio)
        finding.spot_index = i
        if finding.found:
            try:
                measured, expected, verdict = brightness_check(
                    delta, on, spot, finding.detected_center, off=off, target=target)
                finding.brightness_ratio_measured = measured
                finding.brightness_ratio_expected = expected
                finding.brightness_verdict = verdict
            except ValidationError as exc:
                finding.warnings.append(f"brightness not measurable: {exc}")
            try:
                measured, expected, verdict = size_check(
                    delta, spot, finding.detected_center, color_ratio=target.color_ratio)
                finding.half_radius_measured = measured
                finding.half_radius_expected = expected
                finding.size_verdict = verdict
            except ValidationError as exc:
                finding.warnings.append(f"size not measurable: {exc}")
        findings.append(finding)

    current_loss: float | None = None
    loss_error: str | None = None
    if victim_emb is not None:
        try:
            current_loss = distance(oracle.embed(np.clip(on, 0.0, 1.0)), victim_emb)
        except OracleError as exc:
            loss_error = str(exc)
    else:
        loss_error = "no victim embedding supplied"

    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return CalibrationReport(spots=findings, current_loss=current_loss,
                             loss_error=loss_error, timestamp=timestamp)
