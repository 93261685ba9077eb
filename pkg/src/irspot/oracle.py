"""Face-embedding oracles: a fully deterministic built-in reference model and
clients for external models speaking a newline-delimited JSON protocol.

Every oracle maps an (H, W, 3) image to a fixed-length vector. Images are
clamped to [0, 1] and resized to the oracle's input size at this boundary
(the camera cannot exceed full scale); interior pipeline arithmetic stays
unclamped. Similarity is squared L2 distance with a strict decision
threshold (default 1.242): a pair is "same person" iff distance < threshold.

The reference oracle needs no external assets: grayscale (0.299, 0.587,
0.114), bilinear downsample to 16x16, orthonormal 2-D DCT-II, the 64
lowest-frequency coefficients in zig-zag order excluding DC, L2-normalized.
It also exposes the analytic gradient of the embedding with respect to the
input image, which enables the white-box attack mode.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .image import resize_adjoint, resize_bilinear
from .validation import ValidationError, check_image

__all__ = [
    "DEFAULT_THRESHOLD",
    "Embedding",
    "OracleConfig",
    "OracleError",
    "ReferenceEmbeddingOracle",
    "HttpEmbeddingOracle",
    "SubprocessEmbeddingOracle",
    "distance",
    "same_person",
    "make_embedding_oracle",
]

DEFAULT_THRESHOLD = 1.242

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
DCT_SIZE = 16
EMBEDDING_LENGTH = 64
_NORM_EPS = 1e-12


class OracleError(RuntimeError):
    """Oracle unreachable, timed out, or returned a malformed response."""


@dataclass(frozen=True)
class Embedding:
    """Fixed-length embedding vector with a unit-norm marker."""

    values: np.ndarray
    unit_norm: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class OracleConfig:
    """How to reach an oracle and how to interpret its distances."""

    kind: str = "reference"  # "reference" or "external"
    endpoint: str | None = None
    threshold: float = DEFAULT_THRESHOLD
    input_size: int = 160
    timeout: float = 10.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValidationError(f"threshold must be > 0, got {self.threshold}",
                                  field="threshold")


def distance(a, b) -> float:
    """Squared L2 distance between two embeddings."""
    av = a.values if isinstance(a, Embedding) else np.asarray(a, dtype=np.float64)
    bv = b.values if isinstance(b, Embedding) else np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ValidationError(f"embedding length mismatch: {av.shape} vs {bv.shape}")
    d = av - bv
    return float(np.dot(d, d))


def same_person(a, b, cfg: OracleConfig | float = DEFAULT_THRESHOLD) -> bool:
    """Strict threshold decision: distance strictly below the threshold matches."""
    th = cfg.threshold if isinstance(cfg, OracleConfig) else float(cfg)
    return distance(a, b) < th


def zigzag_indices(n: int) -> np.ndarray:
    """Flat indices of an n x n grid in JPEG zig-zag traversal order."""
    order = []
    for s in range(2 * n - 1):
        if s % 2 == 1:  # odd diagonal: walk row index upward
            rows = range(max(0, s - n + 1), min(s, n - 1) + 1)
        else:
            rows = range(min(s, n - 1), max(0, s - n + 1) - 1, -1)
        for i in rows:
            order.append(i * n + (s - i))
    return np.asarray(order, dtype=np.intp)


_ZIGZAG = zigzag_indices(DCT_SIZE)
# Lowest 64 AC coefficients: zig-zag positions 1..64 (position 0 is DC).
_SELECTED = _ZIGZAG[1 : EMBEDDING_LENGTH + 1]


def prepare_input(img, input_size: int) -> np.ndarray:
    """Clamp to [0, 1] and resize to the oracle's square input size."""
    img = check_image(img)
    clamped = np.clip(img, 0.0, 1.0)
    if clamped.shape[0] != input_size or clamped.shape[1] != input_size:
        clamped = resize_bilinear(clamped, input_size, input_size)
    return clamped


class ReferenceEmbeddingOracle:
    """Deterministic stand-in embedding model, identical across platforms.

    Pipeline: clamp -> resize to ``input_size`` -> grayscale -> bilinear
    16x16 -> orthonormal DCT-II -> zig-zag AC coefficients 1..64 -> L2
    normalization. A constant image has no AC energy; its embedding is the
    zero vector with the unit-norm flag cleared.
    """

    embedding_length = EMBEDDING_LENGTH

    def __init__(self, input_size: int = 160, threshold: float = DEFAULT_THRESHOLD):
        self.input_size = int(input_size)
        self.threshold = float(threshold)

    @property
    def config(self) -> OracleConfig:
        return OracleConfig(kind="reference", threshold=self.threshold,
                            input_size=self.input_size)

    def _coefficients(self, img: np.ndarray) -> np.ndarray:
        prepared = prepare_input(img, self.input_size)
        gray = (GRAY_WEIGHTS[0] * prepared[:, :, 0]
                + GRAY_WEIGHTS[1] * prepared[:, :, 1]
                + GRAY_WEIGHTS[2] * prepared[:, :, 2])
        small = resize_bilinear(gray, DCT_SIZE, DCT_SIZE)
        coeffs = scipy.fft.dctn(small, type=2, norm="ortho")
        return coeffs.reshape(-1)[_SELECTED]

    def embed(self, img) -> Embedding:
        z = self._coefficients(img)
        norm = float(np.linalg.norm(z))
        if norm < _NORM_EPS:
            return Embedding(np.zeros(EMBEDDING_LENGTH), unit_norm=False)
        return Embedding(z / norm, unit_norm=True)

    def grad_image(self, img, d_embedding) -> np.ndarray:
        """Adjoint map: gradient of ``d_embedding . embed(img)`` w.r.t. ``img``.

        Saturated pixels (raw value outside [0, 1]) receive zero gradient,
        matching the clamp at the oracle boundary. The image must already be
        at the oracle's input size.
        """
        img = check_image(img)
        if img.shape[0] != self.input_size or img.shape[1] != self.input_size:
            raise ValidationError(
                f"grad_image expects a {self.input_size}x{self.input_size} image, "
                f"got {img.shape[0]}x{img.shape[1]}")
        dv = np.asarray(d_embedding, dtype=np.float64).reshape(-1)
        if dv.size != EMBEDDING_LENGTH:
            raise ValidationError(f"gradient vector must have length {EMBEDDING_LENGTH}")

        z = self._coefficients(img)
        norm = float(np.linalg.norm(z))
        if norm < _NORM_EPS:
            return np.zeros_like(img)
        v = z / norm
        dz = (dv - v * float(v @ dv)) / norm

        dcoeffs = np.zeros(DCT_SIZE * DCT_SIZE)
        dcoeffs[_SELECTED] = dz
        # Orthonormal DCT-II: the adjoint equals the inverse transform.
        dsmall = scipy.fft.idctn(dcoeffs.reshape(DCT_SIZE, DCT_SIZE),
                                 type=2, norm="ortho")
        dgray = resize_adjoint(dsmall, self.input_size, self.input_size)

        grad = np.empty_like(img)
        for c in range(3):
            grad[:, :, c] = GRAY_WEIGHTS[c] * dgray
        saturated = (img < 0.0) | (img > 1.0)
        grad[saturated] = 0.0
        return grad


# --- external oracle wire protocol -------------------------------------------
#
# One JSON object per line, over HTTP POST /embed or subprocess stdio:
#   request:  {"op": "embed", "width": W, "height": H,
#              "pixels": "<base64 of row-major float32 RGB>"}
#   response: {"embedding": [f, ...]}  or  {"error": "msg"}


def encode_image_request(op: str, img: np.ndarray) -> dict:
    img = np.asarray(img, dtype=np.float64)
    payload = base64.b64encode(img.astype(np.float32).tobytes()).decode("ascii")
    return {"op": op, "width": int(img.shape[1]), "height": int(img.shape[0]),
            "pixels": payload}


def decode_image_request(msg: dict) -> np.ndarray:
    raw = base64.b64decode(msg["pixels"])
    arr = np.frombuffer(raw, dtype=np.float32)
    h, w = int(msg["height"]), int(msg["width"])
    if arr.size != h * w * 3:
        raise OracleError(f"pixel payload size {arr.size} != {h}x{w}x3")
    return arr.reshape(h, w, 3).astype(np.float64)


def _embedding_from_response(data: dict, expected_length: int | None) -> Embedding:
    if not isinstance(data, dict):
        raise OracleError(f"malformed oracle response: {data!r}")
    if "error" in data:
        raise OracleError(f"oracle error: {data['error']}")
    if "embedding" not in data:
        raise OracleError(f"oracle response missing 'embedding': {data!r}")
    vals = np.asarray(data["embedding"], dtype=np.float64).reshape(-1)
    if vals.size == 0:
        raise OracleError("oracle returned an empty embedding")
    if expected_length is not None and vals.size != expected_length:
        # Never silently retry or truncate on a length change.
        raise OracleError(
            f"oracle embedding length changed: {vals.size} != {expected_length}")
    norm = float(np.linalg.norm(vals))
    return Embedding(vals, unit_norm=abs(norm - 1.0) <= 1e-6)


class HttpEmbeddingOracle:
    """Client for an embedding model behind HTTP POST /embed."""

    def __init__(self, url: str, input_size: int = 160, timeout: float = 10.0,
                 threshold: float = DEFAULT_THRESHOLD):
        self.url = url.rstrip("/") + "/embed"
        self.input_size = int(input_size)
        self.timeout = float(timeout)
        self.threshold = float(threshold)
        self._length: int | None = None

    def embed(self, img) -> Embedding:
        import requests

        prepared = prepare_input(img, self.input_size)
        try:
            resp = requests.post(self.url, json=encode_image_request("embed", prepared),
                                 timeout=self.timeout)
            data = resp.json()
        except requests.RequestException as exc:
            raise OracleError(f"embedding oracle unreachable: {exc}") from exc
        except ValueError as exc:
            raise OracleError(f"non-JSON oracle response: {exc}") from exc
        emb = _embedding_from_response(data, self._length)
        self._length = len(emb)
        return emb


class SubprocessEmbeddingOracle:
    """Client for an embedding model spoken to over stdin/stdout, one JSON
    object per line. One request in flight at a time per process."""

    def __init__(self, command, input_size: int = 160, timeout: float = 10.0,
                 threshold: float = DEFAULT_THRESHOLD):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.input_size = int(input_size)
        self.timeout = float(timeout)
        self.threshold = float(threshold)
        self._length: int | None = None
        self._proc: subprocess.Popen | None = None

    def _process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1)
            except OSError as exc:
                raise OracleError(f"cannot start oracle process: {exc}") from exc
        return self._proc

    def _roundtrip(self, request: dict) -> dict:
        proc = self._process()
        try:
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"oracle process pipe broken: {exc}") from exc
        ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
        if not ready:
            raise OracleError(f"oracle timed out after {self.timeout:.1f}s")
        line = proc.stdout.readline()
        if not line:
            raise OracleError("oracle process closed its output")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleError(f"non-JSON oracle response: {line!r}") from exc

    def embed(self, img) -> Embedding:
        prepared = prepare_input(img, self.input_size)
        data = self._roundtrip(encode_image_request("embed", prepared))
        emb = _embedding_from_response(data, self._length)
        self._length = len(emb)
        return emb

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None


def make_embedding_oracle(spec: str | OracleConfig = "reference", *,
                          input_size: int = 160, timeout: float = 10.0,
                          threshold: float = DEFAULT_THRESHOLD):
    """Build an oracle from a CLI-style spec (``reference``, an http(s) URL,
    or a shell command prefixed with ``cmd:``) or from an OracleConfig."""
    if isinstance(spec, OracleConfig):
        endpoint = spec.endpoint if spec.kind == "external" else "reference"
        if spec.kind == "external" and not endpoint:
            raise ValidationError("external oracle config needs an endpoint",
                                  field="endpoint")
        return make_embedding_oracle(endpoint, input_size=spec.input_size,
                                     timeout=spec.timeout, threshold=spec.threshold)
    if spec == "reference":
        return ReferenceEmbeddingOracle(input_size=input_size, threshold=threshold)
    if spec.startswith(("http://", "https://")):
        return HttpEmbeddingOracle(spec, input_size=input_size, timeout=timeout,
                                   threshold=threshold)
    if spec.startswith("cmd:"):
        return SubprocessEmbeddingOracle(spec[4:], input_size=input_size,
                                         timeout=timeout, threshold=threshold)
    raise ValidationError(
        f"unrecognized oracle spec {spec!r} (expected 'reference', a URL, or 'cmd:...')",
        field="oracle")
