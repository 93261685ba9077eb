"""Stateful HTTP facade for interactive spot tuning.

One session holds the attacker image, the victim embedding, the current
perturbation, an optional target perturbation from a prior attack run, and
the loss history. Mutations within a session are serialized and bump a
revision counter by exactly one; the loss returned with a revision is always
the loss of that revision's config, computed through the same pipeline the
CLI uses, so UI numbers and CLI numbers never drift apart.

Errors come back as ``{"error": {"code", "message", "field"?}}`` with
status 400 (malformed request), 404 (no such session), 409 (no target set),
422 (invariant violation), or 502 (oracle failure).
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .attack import AttackConfig, init_spot_config, whitebox_gradient, fd_gradient, \
    _pack, _unpack, _project, _objective_raw, _per_param
from .calibration import calibrate_once
from .image import decode_png_bytes, encode_png_bytes
from .oracle import Embedding, OracleError, ReferenceEmbeddingOracle
from .spots import PerturbationConfig, synthesize
from .validation import ValidationError

__all__ = ["create_app"]


class _ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field

    def response(self) -> JSONResponse:
        err = {"code": self.code, "message": self.message}
        if self.field:
            err["field"] = self.field
        return JSONResponse({"error": err}, status_code=self.status)


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class _Session:
    id: str
    attacker: np.ndarray
    victim_emb: Embedding
    config: PerturbationConfig
    seed: int
    target: PerturbationConfig | None = None
    revision: int = 0
    loss: float = 0.0
    history: list[tuple[int, float]] = dc_field(default_factory=list)
    adam: _AdamState | None = None
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    last_access: float = dc_field(default_factory=time.monotonic)


def _decode_b64_png(payload, field: str) -> np.ndarray:
    if not isinstance(payload, str):
        raise _ApiError(400, "malformed", f"{field} must be a base64 PNG string", field)
    try:
        return decode_png_bytes(base64.b64decode(payload))
    except Exception as exc:
        raise _ApiError(400, "malformed", f"cannot decode {field}: {exc}", field)


def _parse_config(payload, field: str = "config") -> PerturbationConfig:
    try:
        cfg = PerturbationConfig.from_dict(payload)
        cfg.validate()
        return cfg
    except ValidationError as exc:
        raise _ApiError(422, "invalid_config", str(exc), exc.field or field)


def create_app(oracle=None, state_dir: str | None = None, idle_ttl: float = 3600.0,
               jobs: int = 1, step_config: AttackConfig | None = None) -> FastAPI:
    """Build the service app. ``oracle`` defaults to the reference oracle;
    ``state_dir`` enables JSON snapshots that survive restarts. ``jobs`` is
    the connection budget for external oracles (the in-process reference
    oracle is pure and needs no pooling)."""
    oracle = oracle if oracle is not None else ReferenceEmbeddingOracle()
    step_cfg = step_config or AttackConfig()
    app = FastAPI(title="irspot session service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()
    state_path = Path(state_dir) if state_dir else None
    if state_path:
        state_path.mkdir(parents=True, exist_ok=True)
        for snap in sorted(state_path.glob("*.json")):
            try:
                sess = _load_snapshot(snap)
                sessions[sess.id] = sess
            except Exception:
                continue  # unreadable snapshot; skip rather than fail startup

    def _save(sess: _Session) -> None:
        if state_path:
            _write_snapshot(state_path / f"{sess.id}.json", sess)

    def _purge() -> None:
        now = time.monotonic()
        with registry_lock:
            stale = [sid for sid, s in sessions.items()
                     if now - s.last_access > idle_ttl]
            for sid in stale:
                sessions.pop(sid, None)
                if state_path:
                    (state_path / f"{sid}.json").unlink(missing_ok=True)

    def _get(session_id: str) -> _Session:
        _purge()
        with registry_lock:
            sess = sessions.get(session_id)
        if sess is None:
            raise _ApiError(404, "not_found", f"no session {session_id}")
        sess.last_access = time.monotonic()
        return sess

    def _loss_of(sess: _Session, config: PerturbationConfig) -> float:
        try:
            value, _, _ = _objective_raw(sess.attacker, sess.victim_emb,
                                         _pack(config), config.color_ratio, oracle)
        except OracleError as exc:
            raise _ApiError(502, "oracle_failure", str(exc))
        return float(value)

    @app.exception_handler(_ApiError)
    async def _api_error_handler(request: Request, exc: _ApiError):
        return exc.response()

    @app.post("/sessions")
    def create_session(body: dict):
        attacker = _decode_b64_png(body.get("attacker_png"), "attacker_png")
        if "victim_png" in body:
            victim = _decode_b64_png(body.get("victim_png"), "victim_png")
            try:
                victim_emb = oracle.embed(victim)
            except OracleError as exc:
                raise _ApiError(502, "oracle_failure", str(exc))
        elif "victim_embedding" in body:
            try:
                victim_emb = Embedding(np.asarray(body["victim_embedding"],
                                                  dtype=np.float64))
            except (TypeError, ValueError) as exc:
                raise _ApiError(400, "malformed", f"bad victim_embedding: {exc}",
                                "victim_embedding")
        else:
            raise _ApiError(400, "malformed",
                            "victim_png or victim_embedding is required", "victim")
        seed = int(body.get("seed", 0))
        target = _parse_config(body["target"], "target") if "target" in body else None

        h, w = attacker.shape[:2]
        init = init_spot_config(AttackConfig(n_spots=step_cfg.n_spots, seed=seed,
                                             color_ratio=step_cfg.color_ratio), h, w)
        config = init.with_amp(0.0)
        sess = _Session(id=uuid.uuid4().hex, attacker=attacker, victim_emb=victim_emb,
                        config=config, seed=seed, target=target)
        sess.loss = _loss_of(sess, config)
        sess.history.append((0, sess.loss))
        with registry_lock:
            sessions[sess.id] = sess
        _save(sess)
        return {"id": sess.id, "revision": 0, "loss": sess.loss}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        sess = _get(session_id)
        with sess.lock:
            return {
                "id": sess.id,
                "revision": sess.revision,
                "loss": sess.loss,
                "config": sess.config.to_dict(),
                "target": sess.target.to_dict() if sess.target else None,
                "history": [[rev, loss] for rev, loss in sess.history],
            }

    @app.put("/sessions/{session_id}/config")
    def put_config(session_id: str, body: dict):
        sess = _get(session_id)
        config = _parse_config(body)
        with sess.lock:
            loss = _loss_of(sess, config)
            sess.config = config
            sess.adam = None  # manual edit invalidates the optimizer's momentum
            sess.revision += 1
            sess.loss = loss
            sess.history.append((sess.revision, loss))
            preview = base64.b64encode(
                encode_png_bytes(synthesize(sess.attacker, config))).decode("ascii")
            _save(sess)
            return {"revision": sess.revision, "loss": loss, "preview_png": preview}

    @app.put("/sessions/{session_id}/target")
    def put_target(session_id: str, body: dict):
        sess = _get(session_id)
        target = _parse_config(body, "target")
        with sess.lock:
            sess.target = target
            sess.revision += 1
            _save(sess)
            return {"revision": sess.revision}

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, body: dict):
        sess = _get(session_id)
        n = body.get("n")
        if not isinstance(n, int) or n < 1:
            raise _ApiError(422, "invalid_step", "n must be an integer >= 1", "n")
        with sess.lock:
            h, w = sess.attacker.shape[:2]
            n_spots = len(sess.config.spots)
            theta = _pack(sess.config)
            if sess.adam is None:
                sess.adam = _AdamState(m=np.zeros_like(theta), v=np.zeros_like(theta))
            adam = sess.adam
            lr = _per_param(n_spots, step_cfg.lr_amp, step_cfg.lr_pos,
                            step_cfg.lr_sigma, step_cfg.lr_s)
            trajectory = []
            try:
                for _ in range(n):
                    config = _unpack(theta, sess.config.color_ratio)
                    value, synth, emb = _objective_raw(
                        sess.attacker, sess.victim_emb, theta,
                        sess.config.color_ratio, oracle)
                    trajectory.append(float(value))
                    if hasattr(oracle, "grad_image"):
                        grad = whitebox_gradient(sess.attacker, sess.victim_emb,
                                                 config, oracle, synth=synth, emb=emb)
                    else:
                        grad = fd_gradient(sess.attacker, sess.victim_emb, config,
                                           oracle, step_cfg, base_value=value)
                    adam.t += 1
                    adam.m = step_cfg.beta1 * adam.m + (1 - step_cfg.beta1) * grad
                    adam.v = step_cfg.beta2 * adam.v + (1 - step_cfg.beta2) * grad * grad
                    m_hat = adam.m / (1 - step_cfg.beta1 ** adam.t)
                    v_hat = adam.v / (1 - step_cfg.beta2 ** adam.t)
                    theta = _project(
                        theta - lr * m_hat / (np.sqrt(v_hat) + step_cfg.adam_eps),
                        step_cfg.bounds, h, w)
                final_loss, _, _ = _objective_raw(sess.attacker, sess.victim_emb,
                                                  theta, sess.config.color_ratio, oracle)
            except OracleError as exc:
                raise _ApiError(502, "oracle_failure", str(exc))
            sess.config = _unpack(theta, sess.config.color_ratio)
            sess.revision += 1
            sess.loss = float(final_loss)
            sess.history.append((sess.revision, sess.loss))
            _save(sess)
            return {"revision": sess.revision, "loss": sess.loss,
                    "config": sess.config.to_dict(), "trajectory": trajectory}

    @app.post("/sessions/{session_id}/calibrate")
    def calibrate(session_id: str, body: dict):
        sess = _get(session_id)
        on = _decode_b64_png(body.get("on_png"), "on_png")
        off = _decode_b64_png(body.get("off_png"), "off_png")
        with sess.lock:
            if sess.target is None:
                raise _ApiError(409, "no_target",
                                "no target perturbation set; run or import an attack first")
            if on.shape != off.shape or on.shape != sess.attacker.shape:
                raise _ApiError(422, "size_mismatch",
                                f"on/off photos must match the attacker canvas "
                                f"{sess.attacker.shape[:2]}; got {on.shape[:2]} and "
                                f"{off.shape[:2]}")
            try:
                report = calibrate_once(on, off, sess.target, sess.victim_emb, oracle)
            except ValidationError as exc:
                raise _ApiError(422, "invalid_calibration", str(exc), exc.field)
            return report.to_dict()

    return app


# --- snapshot persistence -----------------------------------------------------


def _write_snapshot(path: Path, sess: _Session) -> None:
    snap = {
        "id": sess.id,
        "attacker_png": base64.b64encode(encode_png_bytes(sess.attacker)).decode(),
        "victim_embedding": sess.victim_emb.values.tolist(),
        "victim_unit_norm": sess.victim_emb.unit_norm,
        "config": sess.config.to_dict(),
        "target": sess.target.to_dict() if sess.target else None,
        "seed": sess.seed,
        "revision": sess.revision,
        "loss": sess.loss,
        "history": [[rev, loss] for rev, loss in sess.history],
    }
    path.write_text(json.dumps(snap))


def _load_snapshot(path: Path) -> _Session:
    snap = json.loads(path.read_text())
    sess = _Session(
        id=snap["id"],
        attacker=decode_png_bytes(base64.b64decode(snap["attacker_png"])),
        victim_emb=Embedding(np.asarray(snap["victim_embedding"]),
                             unit_norm=snap.get("victim_unit_norm", False)),
        config=PerturbationConfig.from_dict(snap["config"]),
        seed=snap.get("seed", 0),
        target=(PerturbationConfig.from_dict(snap["target"])
                if snap.get("target") else None),
        revision=snap["revision"],
    )
    sess.loss = snap["loss"]
    sess.history = [(rev, loss) for rev, loss in snap["history"]]
    return sess
