"""Search spot layouts that impersonate a victim or dodge self-recognition.

The optimization variable is the flat vector [amp, px_0, py_0, sigma_0, s_0,
px_1, ...] (4n+1 entries for n spots). The objective is the squared-L2
embedding distance between the clamped synthesized image and the target
embedding: minimized for impersonation, maximized for dodging. Updates use
Adam with per-group learning rates (positions move in pixels; sigma, s and
amp are dimensionless), followed by projection onto the parameter bounds.

Two gradient modes:

* ``whitebox``: the oracle's analytic image gradient chained through the
  spot model (zero gradient through saturated pixels).
* ``blackbox``: forward finite differences, one oracle query per parameter
  plus one at the base point (central differencing behind a switch).

Iteration budget: ``max_iters`` steps; if the objective crosses the decision
threshold within the budget, ``refine_iters`` more steps are granted once and
the overall best is returned.

Bookkeeping mirrors observed optimizer behavior: a spot whose brightness
coefficient sits at 0 for 20 consecutive iterations, or whose center steps
beyond the canvas + 3 sigma margin, is frozen in place and reported in
``dropped_spots``; it is never re-seeded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .oracle import DEFAULT_THRESHOLD, Embedding, distance
from .spots import (
    CANVAS_MARGIN_SIGMAS,
    DEFAULT_COLOR_RATIO,
    PerturbationConfig,
    SpotParams,
    colorize,
    render_field,
)
from .validation import ValidationError, check_image, check_same_shape

__all__ = [
    "AttackConfig",
    "AttackResult",
    "objective",
    "fd_gradient",
    "whitebox_gradient",
    "init_spot_config",
    "run_attack",
    "run_dodge",
]

# Canonical facial loci for spot initialization, as (x, y) fractions of the
# canvas: forehead center, left cheek, right cheek, nose bridge, chin.
INIT_LOCI = ((0.5, 0.25), (0.3, 0.55), (0.7, 0.55), (0.5, 0.45), (0.5, 0.8))
INIT_SIGMA = 8.0
INIT_S = 1.0
INIT_AMP = 0.1
DROP_ZERO_S_ITERS = 20


@dataclass(frozen=True)
class Bounds:
    """Box constraints; positions are allowed a 3-sigma margin off canvas.

    A collapsed interval (lo == hi) pins that parameter, e.g. amp=(0, 0)
    disables the perturbation entirely.
    """

    sigma: tuple[float, float] = (1.0, 30.0)
    s: tuple[float, float] = (0.0, 10.0)
    amp: tuple[float, float] = (0.0, 5.0)

    def validate(self) -> None:
        for name in ("sigma", "s", "amp"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(f"inverted {name} bounds: ({lo}, {hi})",
                                      field=name)


@dataclass(frozen=True)
class AttackConfig:
    n_spots: int = 5
    max_iters: int = 200
    refine_iters: int = 200
    lr_pos: float = 0.05
    lr_sigma: float = 0.01
    lr_s: float = 0.01
    lr_amp: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_mode: str = "whitebox"  # "whitebox" | "blackbox"
    fd_step_pos: float = 0.5
    fd_step_sigma: float = 0.1
    fd_step_s: float = 0.01
    fd_step_amp: float = 0.01
    central_fd: bool = False
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    bounds: Bounds = field(default_factory=Bounds)
    color_ratio: tuple[float, float, float] = DEFAULT_COLOR_RATIO

    def validate(self) -> None:
        if self.n_spots < 1:
            raise ValidationError("n_spots must be >= 1", field="n_spots")
        if self.grad_mode not in ("whitebox", "blackbox"):
            raise ValidationError(f"unknown grad_mode {self.grad_mode!r}",
                                  field="grad_mode")
        for name in ("fd_step_pos", "fd_step_sigma", "fd_step_s", "fd_step_amp"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0", field=name)
        self.bounds.validate()


@dataclass
class AttackResult:
    mode: str
    success: bool
    initial_distance: float
    best_distance: float
    threshold: float
    iterations: int
    oracle_calls: int
    trajectory: list[float]
    dropped_spots: list[int]
    best_config: PerturbationConfig

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "success": self.success,
            "initial_distance": self.initial_distance,
            "best_distance": self.best_distance,
            "threshold": self.threshold,
            "iterations": self.iterations,
            "oracle_calls": self.oracle_calls,
            "trajectory": self.trajectory,
            "dropped_spots": self.dropped_spots,
            "best_config": self.best_config.to_dict(),
        }
        return d

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


# --- parameter vector packing -------------------------------------------------

def _pack(config: PerturbationConfig) -> np.ndarray:
    vec = [config.amp]
    for sp in config.spots:
        vec += [sp.px, sp.py, sp.sigma, sp.s]
    return np.asarray(vec, dtype=np.float64)


def _unpack(vec: np.ndarray, color_ratio) -> PerturbationConfig:
    n = (vec.size - 1) // 4
    spots = tuple(
        SpotParams(px=vec[1 + 4 * i], py=vec[2 + 4 * i],
                   sigma=vec[3 + 4 * i], s=vec[4 + 4 * i])
        for i in range(n)
    )
    return PerturbationConfig(amp=float(vec[0]), spots=spots, color_ratio=color_ratio)


def _per_param(n_spots: int, amp_val: float, pos_val: float,
               sigma_val: float, s_val: float) -> np.ndarray:
    out = np.empty(4 * n_spots + 1)
    out[0] = amp_val
    for i in range(n_spots):
        out[1 + 4 * i : 5 + 4 * i] = (pos_val, pos_val, sigma_val, s_val)
    return out


def _project(vec: np.ndarray, bounds: Bounds, height: int, width: int) -> np.ndarray:
    out = vec.copy()
    out[0] = np.clip(out[0], *bounds.amp)
    n = (vec.size - 1) // 4
    for i in range(n):
        j = 1 + 4 * i
        sigma = np.clip(out[j + 2], *bounds.sigma)
        margin = CANVAS_MARGIN_SIGMAS * sigma
        out[j] = np.clip(out[j], -margin, (width - 1) + margin)
        out[j + 1] = np.clip(out[j + 1], -margin, (height - 1) + margin)
        out[j + 2] = sigma
        out[j + 3] = np.clip(out[j + 3], *bounds.s)
    return out


# --- objective and gradients ----------------------------------------------------


class _CountingOracle:
    """Wraps an oracle to count embed calls made during a run."""

    def __init__(self, oracle):
        self._oracle = oracle
        self.embed_calls = 0

    def embed(self, img):
        self.embed_calls += 1
        return self._oracle.embed(img)

    def grad_image(self, img, dv):
        return self._oracle.grad_image(img, dv)

    @property
    def has_grad(self) -> bool:
        return hasattr(self._oracle, "grad_image")


def _synthesize_raw(base, vec: np.ndarray, color_ratio) -> np.ndarray:
    """Synthesis without config validation (FD probes may step out of bounds)."""
    config = _unpack(vec, color_ratio)
    h, w = base.shape[:2]
    return base + config.amp * colorize(render_field(config, h, w), color_ratio)


def _objective_raw(base, target: Embedding, vec: np.ndarray, color_ratio, oracle):
    synth = _synthesize_raw(base, vec, color_ratio)
    emb = oracle.embed(synth)
    return distance(emb, target), synth, emb


def objective(base, victim_emb: Embedding, config: PerturbationConfig, oracle) -> float:
    """Embedding distance between the clamped synthesized image and the target."""
    base = check_image(base, "base")
    config.validate()
    value, _, _ = _objective_raw(base, victim_emb, _pack(config),
                                 config.color_ratio, oracle)
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite objective value {value!r}")
    return value


def forward_difference(f, vec: np.ndarray, steps: np.ndarray,
                       f0: float | None = None) -> np.ndarray:
    """(f(x + step_k e_k) - f(x)) / step_k per coordinate; one evaluation per
    coordinate plus one at the base point (skipped when ``f0`` is given)."""
    if f0 is None:
        f0 = f(vec)
    grad = np.zeros_like(vec)
    for k in range(vec.size):
        probe = vec.copy()
        probe[k] += steps[k]
        grad[k] = (f(probe) - f0) / steps[k]
    return grad


def central_difference(f, vec: np.ndarray, steps: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(vec)
    for k in range(vec.size):
        up = vec.copy()
        up[k] += steps[k]
        down = vec.copy()
        down[k] -= steps[k]
        grad[k] = (f(up) - f(down)) / (2.0 * steps[k])
    return grad


def fd_gradient(base, victim_emb: Embedding, config: PerturbationConfig, oracle,
                cfg: AttackConfig | None = None, *, base_value: float | None = None):
    """Finite-difference gradient of the objective (black-box mode).

    Forward differences by default: (J(theta + step_k e_k) - J(theta)) / step_k,
    exactly one oracle query per parameter plus one base query (4n+2 total).
    ``central_fd`` switches to central differences at twice the query cost.
    A cached ``base_value`` skips the base query.
    """
    base = check_image(base, "base")
    cfg = cfg or AttackConfig(n_spots=len(config.spots))
    vec = _pack(config)
    steps = _per_param(len(config.spots), cfg.fd_step_amp, cfg.fd_step_pos,
                       cfg.fd_step_sigma, cfg.fd_step_s)

    def f(theta):
        value, _, _ = _objective_raw(base, victim_emb, theta, config.color_ratio, oracle)
        return value

    if cfg.central_fd:
        return central_difference(f, vec, steps)
    return forward_difference(f, vec, steps, f0=base_value)


def whitebox_gradient(base, victim_emb: Embedding, config: PerturbationConfig,
                      oracle, *, synth: np.ndarray | None = None,
                      emb: Embedding | None = None) -> np.ndarray:
    """Analytic objective gradient: the oracle's image gradient contracted
    with the spot model's parameter sensitivities.

    Requires an oracle exposing ``grad_image``. Saturated pixels contribute
    zero (the oracle applies the clamp subgradient convention).
    """
    base = check_image(base, "base")
    if not hasattr(oracle, "grad_image"):
        raise ValidationError("oracle lacks image-gradient capability; "
                              "use blackbox mode")
    h, w = base.shape[:2]
    ratio = config.color_ratio
    vec = _pack(config)
    if synth is None:
        synth = _synthesize_raw(base, vec, ratio)
    if emb is None:
        emb = oracle.embed(synth)
    dv = 2.0 * (emb.values - victim_emb.values)
    g_img = oracle.grad_image(synth, dv)

    # dI/dtheta factors through the scalar field for every spot parameter;
    # contract the image gradient with the color ratio once.
    wsum = (ratio[0] * g_img[:, :, 0] + ratio[1] * g_img[:, :, 1]
            + ratio[2] * g_img[:, :, 2])
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    grad = np.zeros_like(vec)
    total_field = np.zeros((h, w))
    amp = vec[0]
    u = amp * wsum
    n = (vec.size - 1) // 4
    for i in range(n):
        px, py, sigma, s = vec[1 + 4 * i : 5 + 4 * i]
        dx = xs - px
        dy = ys - py
        d2 = dx * dx + dy * dy
        k = np.exp(-d2 / (2.0 * sigma * sigma))
        b = s * k
        total_field += b
        grad[1 + 4 * i] = float(np.sum(u * b * dx) / (sigma * sigma))
        grad[2 + 4 * i] = float(np.sum(u * b * dy) / (sigma * sigma))
        grad[3 + 4 * i] = float(np.sum(u * b * d2) / (sigma ** 3))
        grad[4 + 4 * i] = float(np.sum(u * k))
    grad[0] = float(np.sum(wsum * total_field))
    return grad


# --- initialization and the main loop -----------------------------------------


def init_spot_config(cfg: AttackConfig, height: int, width: int) -> PerturbationConfig:
    """Spots at canonical facial loci with amp = 0.1, all jittered +-5% by seed.

    A nonzero starting amp matters: every spot-parameter gradient scales with
    amp, so an optimizer started at amp = 0 can never move a spot.
    """
    rng = np.random.default_rng(cfg.seed)

    def jit(value: float) -> float:
        return value * rng.uniform(0.95, 1.05)

    spots = []
    for i in range(cfg.n_spots):
        fx, fy = INIT_LOCI[i % len(INIT_LOCI)]
        spots.append(SpotParams(px=jit(fx * (width - 1)), py=jit(fy * (height - 1)),
                                sigma=jit(INIT_SIGMA), s=jit(INIT_S)))
    return PerturbationConfig(amp=jit(INIT_AMP), spots=tuple(spots),
                              color_ratio=cfg.color_ratio)


def _run(base: np.ndarray, target: Embedding, cfg: AttackConfig, oracle,
         mode: str) -> AttackResult:
    h, w = base.shape[:2]
    counting = oracle if isinstance(oracle, _CountingOracle) else _CountingOracle(oracle)
    minimize = mode == "impersonate"
    sign = 1.0 if minimize else -1.0

    theta = _project(_pack(init_spot_config(cfg, h, w)), cfg.bounds, h, w)
    lr = _per_param(cfg.n_spots, cfg.lr_amp, cfg.lr_pos, cfg.lr_sigma, cfg.lr_s)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    frozen = np.zeros(cfg.n_spots, dtype=bool)
    dropped: list[int] = []
    zero_streak = np.zeros(cfg.n_spots, dtype=int)

    def check_finite(value, i):
        if not np.isfinite(value):
            raise RuntimeError(
                f"non-finite objective at iteration {i}: {value!r}; config "
                f"{_unpack(theta, cfg.color_ratio).to_json(indent=None)}")

    # The null perturbation (amp = 0) is the first evaluated candidate: its
    # objective is the unperturbed distance and it may remain the best.
    null_theta = theta.copy()
    null_theta[0] = 0.0
    null_value, _, _ = _objective_raw(base, target, null_theta,
                                      cfg.color_ratio, counting)
    check_finite(null_value, 0)
    trajectory: list[float] = [null_value]
    best_value = null_value
    best_theta = null_theta
    budget = cfg.max_iters
    extended = best_value < cfg.threshold if minimize else best_value > cfg.threshold
    if extended:
        budget = cfg.max_iters + cfg.refine_iters

    i = 0
    while i < budget and not (minimize and best_value == 0.0):
        value, synth, emb = _objective_raw(base, target, theta,
                                           cfg.color_ratio, counting)
        check_finite(value, i)
        trajectory.append(value)
        if (value < best_value) if minimize else (value > best_value):
            best_value = value
            best_theta = theta.copy()
        crossed = best_value < cfg.threshold if minimize else best_value > cfg.threshold
        if crossed and not extended:
            budget = cfg.max_iters + cfg.refine_iters
            extended = True
        if minimize and value == 0.0:
            break  # exact match; nothing left to optimize

        if cfg.grad_mode == "whitebox":
            grad = whitebox_gradient(base, target, _unpack(theta, cfg.color_ratio),
                                     counting, synth=synth, emb=emb)
        else:
            grad = fd_gradient(base, target, _unpack(theta, cfg.color_ratio),
                               counting, cfg, base_value=value)
        grad = sign * grad

        # Adam with bias correction and per-group learning rates.
        i += 1
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** i)
        v_hat = v / (1.0 - cfg.beta2 ** i)
        step = lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        for idx in range(cfg.n_spots):
            if frozen[idx]:
                step[1 + 4 * idx : 5 + 4 * idx] = 0.0
        raw = theta - step
        theta = _project(raw, cfg.bounds, h, w)

        # Spot-loss bookkeeping on the unprojected step.
        for idx in range(cfg.n_spots):
            if frozen[idx]:
                continue
            j = 1 + 4 * idx
            margin = CANVAS_MARGIN_SIGMAS * theta[j + 2]
            off_canvas = not (-margin <= raw[j] <= (w - 1) + margin
                              and -margin <= raw[j + 1] <= (h - 1) + margin)
            if theta[j + 3] == 0.0:
                zero_streak[idx] += 1
            else:
                zero_streak[idx] = 0
            if off_canvas or zero_streak[idx] >= DROP_ZERO_S_ITERS:
                frozen[idx] = True
                dropped.append(idx)

    best = float(best_value)
    success = best < cfg.threshold if minimize else best > cfg.threshold
    return AttackResult(
        mode=mode,
        success=success,
        initial_distance=trajectory[0],
        best_distance=best,
        threshold=cfg.threshold,
        iterations=i,
        oracle_calls=counting.embed_calls,
        trajectory=trajectory,
        dropped_spots=sorted(dropped),
        best_config=_unpack(best_theta, cfg.color_ratio),
    )


def run_attack(base, victim, cfg: AttackConfig, oracle,
               victim_emb: Embedding | None = None) -> AttackResult:
    """Impersonation: minimize the distance to the victim's embedding.

    Deterministic for a fixed seed. The null perturbation (amp = 0) is
    evaluated first, so ``trajectory[0]`` (= ``initial_distance``) is the
    unperturbed attacker-victim distance; optimization then starts from the
    jittered canonical-loci layout. In black-box mode a run of k iterations
    makes exactly k * (4 n_spots + 2) + 1 synthesized-image embed calls plus
    the single victim embed; ``oracle_calls`` counts both.
    """
    base = check_image(base, "base")
    cfg.validate()
    counting = _CountingOracle(oracle)
    if victim_emb is None:
        victim = check_image(victim, "victim")
        check_same_shape(base, victim, "attacker/victim images")
        victim_emb = counting.embed(victim)
    return _run(base, victim_emb, cfg, counting, "impersonate")


def run_dodge(base, cfg: AttackConfig, oracle) -> AttackResult:
    """Dodging: maximize the self-distance; success iff it exceeds the threshold."""
    base = check_image(base, "base")
    cfg.validate()
    counting = _CountingOracle(oracle)
    self_emb = counting.embed(base)
    return _run(base, self_emb, cfg, counting, "dodge")
