"""Flood illumination and dodging success checks.

Dodging succeeds either when the landmark predictor fails to find a face at
all (flood illumination drowns the preprocessing step) or when the embedding
self-distance exceeds the recognition threshold (handled by the optimizer in
:mod:`irspot.attack`; the predicate lives here).
"""

from __future__ import annotations

import json
import select
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from .oracle import OracleError, distance, encode_image_request, prepare_input
from .validation import check_image, check_non_negative, check_same_shape

__all__ = [
    "LandmarkResult",
    "flood_illuminate",
    "check_dodge_landmark",
    "check_dodge_embedding",
    "ReferenceLandmarkOracle",
    "HttpLandmarkOracle",
    "SubprocessLandmarkOracle",
    "make_landmark_oracle",
]


@dataclass(frozen=True)
class LandmarkResult:
    status: str  # "detected" | "none"
    points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.status == "none" and self.points:
            raise ValueError("a 'none' landmark result cannot carry points")


def flood_illuminate(base, strength: float, ratio=None) -> np.ndarray:
    """Uniform infrared wash: every pixel gains strength * ratio per channel.

    Equivalent to a single spot of unbounded spread; values stay unclamped
    until export or the oracle boundary.
    """
    from .spots import DEFAULT_COLOR_RATIO

    base = check_image(base, "base")
    check_non_negative(strength, "strength")
    ratio = np.asarray(ratio if ratio is not None else DEFAULT_COLOR_RATIO,
                       dtype=np.float64)
    return base + strength * ratio


def check_dodge_landmark(img, landmark_oracle) -> bool:
    """True iff the landmark predictor finds no face in the (clamped) image."""
    img = check_image(img)
    result = landmark_oracle.landmarks(np.clip(img, 0.0, 1.0))
    return result.status == "none"


def check_dodge_embedding(base, perturbed, oracle, threshold: float) -> bool:
    """True iff the self-distance strictly exceeds the threshold."""
    base = check_image(base, "base")
    perturbed = check_image(perturbed, "perturbed")
    check_same_shape(base, perturbed)
    return distance(oracle.embed(base), oracle.embed(perturbed)) > threshold


class ReferenceLandmarkOracle:
    """Documented test stand-in for a real landmark predictor.

    Detection fails (status "none") iff the mean intensity of the clamped
    image exceeds the cutoff, mimicking a predictor blinded by strong
    infrared wash. Otherwise it reports a fixed 68-point grid.
    """

    def __init__(self, luminance_cutoff: float = 0.85):
        self.luminance_cutoff = float(luminance_cutoff)

    def landmarks(self, img) -> LandmarkResult:
        img = check_image(img)
        if float(np.clip(img, 0.0, 1.0).mean()) > self.luminance_cutoff:
            return LandmarkResult("none")
        h, w = img.shape[:2]
        points = []
        for i in range(68):
            gx, gy = i % 10, i // 10
            points.append(((0.2 + 0.06 * gx) * (w - 1), (0.25 + 0.08 * gy) * (h - 1)))
        return LandmarkResult("detected", tuple(points))


def _parse_landmark_response(data: dict) -> LandmarkResult:
    if not isinstance(data, dict):
        raise OracleError(f"malformed landmark response: {data!r}")
    if "error" in data:
        raise OracleError(f"landmark oracle error: {data['error']}")
    status = data.get("status")
    if status == "none":
        return LandmarkResult("none")
    if status == "detected":
        points = tuple((float(p[0]), float(p[1])) for p in data.get("points", []))
        return LandmarkResult("detected", points)
    raise OracleError(f"landmark response has unknown status: {data!r}")


class HttpLandmarkOracle:
    """Landmark predictor behind HTTP POST /landmarks."""

    def __init__(self, url: str, input_size: int = 160, timeout: float = 10.0):
        self.url = url.rstrip("/") + "/landmarks"
        self.input_size = int(input_size)
        self.timeout = float(timeout)

    def landmarks(self, img) -> LandmarkResult:
        import requests

        prepared = prepare_input(img, self.input_size)
        try:
            resp = requests.post(self.url,
                                 json=encode_image_request("landmarks", prepared),
                                 timeout=self.timeout)
            data = resp.json()
        except requests.RequestException as exc:
            raise OracleError(f"landmark oracle unreachable: {exc}") from exc
        except ValueError as exc:
            raise OracleError(f"non-JSON landmark response: {exc}") from exc
        return _parse_landmark_response(data)


class SubprocessLandmarkOracle:
    """Landmark predictor spoken to over stdio, one JSON object per line."""

    def __init__(self, command, input_size: int = 160, timeout: float = 10.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.input_size = int(input_size)
        self.timeout = float(timeout)
        self._proc: subprocess.Popen | None = None

    def landmarks(self, img) -> LandmarkResult:
        prepared = prepare_input(img, self.input_size)
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1)
            except OSError as exc:
                raise OracleError(f"cannot start landmark process: {exc}") from exc
        proc = self._proc
        try:
            proc.stdin.write(json.dumps(encode_image_request("landmarks", prepared)) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"landmark process pipe broken: {exc}") from exc
        ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
        if not ready:
            raise OracleError(f"landmark oracle timed out after {self.timeout:.1f}s")
        line = proc.stdout.readline()
        if not line:
            raise OracleError("landmark process closed its output")
        try:
            return _parse_landmark_response(json.loads(line))
        except json.JSONDecodeError as exc:
            raise OracleError(f"non-JSON landmark response: {line!r}") from exc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None


def make_landmark_oracle(spec: str = "reference", *, input_size: int = 160,
                         timeout: float = 10.0):
    if spec == "reference":
        return ReferenceLandmarkOracle()
    if spec.startswith(("http://", "https://")):
        return HttpLandmarkOracle(spec, input_size=input_size, timeout=timeout)
    if spec.startswith("cmd:"):
        return SubprocessLandmarkOracle(spec[4:], input_size=input_size, timeout=timeout)
    raise ValueError(f"unrecognized landmark oracle spec {spec!r}")
