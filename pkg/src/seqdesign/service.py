"""HTTP deployment service: step-wise rollout sessions over JSON.

A session alternates strictly between proposing a design and receiving an
observation; proposals may be overridden before execution, and the
approximate posterior can be sampled at any step.  Checkpoint weights are
loaded once and shared read-only across sessions; per-session operations
are serialized by a lock.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
import uuid
from pathlib import Path

import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .errors import CheckpointError, ContractError, SeqDesignError
from .rollout import DeploySession
from .traces import decode_array, encode_array, save_trace, trace_from_session
from .training import bundle_from_checkpoint

API_VERSION = 1

_STATUS = {
    "protocol_error": 409,
    "horizon_error": 409,
    "contract_error": 422,
    "config_error": 422,
    "checkpoint_error": 422,
    "domain_error": 422,
    "limit_error": 422,
    "not_found": 404,
}


class LimitError(SeqDesignError):
    code = "limit_error"


class NotFoundError(SeqDesignError):
    code = "not_found"


class ServiceConfig:
    def __init__(self, checkpoints: dict | None = None, default: str | None = None,
                 max_posterior_samples: int = 4096, posterior_ode_steps: int = 256,
                 session_ttl: float | None = None, trace_dir=None,
                 corpus_path=None, static_dir=None):
        self.checkpoints = dict(checkpoints or {})
        self.default = default or (next(iter(self.checkpoints)) if self.checkpoints else None)
        self.max_posterior_samples = max_posterior_samples
        self.posterior_ode_steps = posterior_ode_steps
        self.session_ttl = session_ttl
        self.trace_dir = Path(trace_dir) if trace_dir else None
        self.corpus_path = corpus_path
        self.static_dir = static_dir


class _SessionRecord:
    def __init__(self, session: DeploySession, checkpoint_name: str, preset: str):
        self.session = session
        self.checkpoint_name = checkpoint_name
        self.preset = preset
        self.lock = threading.Lock()
        self.last_access = time.monotonic()
        self.posterior_cache: dict = {}

    def touch(self):
        self.last_access = time.monotonic()


def _digest(t: torch.Tensor) -> str:
    data = t.detach().cpu().numpy().astype("<f4").tobytes()
    return hashlib.sha256(data).hexdigest()[:16]


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="seqdesign rollout service")
    bundles: dict = {}
    sessions: dict[str, _SessionRecord] = {}
    registry_lock = threading.Lock()

    def load_bundle(name_or_path: str):
        key = str(name_or_path)
        with registry_lock:
            if key in bundles:
                return bundles[key]
        path = config.checkpoints.get(key, key)
        if not Path(path).exists():
            raise CheckpointError(f"unknown checkpoint {key!r}")
        bundle, payload = bundle_from_checkpoint(path, corpus_path=config.corpus_path)
        bundle.eval_mode()
        with registry_lock:
            bundles[key] = (bundle, payload["preset_key"])
        return bundles[key]

    def expire_sessions():
        if config.session_ttl is None:
            return
        now = time.monotonic()
        for sid in list(sessions):
            rec = sessions.get(sid)
            if rec is not None and now - rec.last_access > config.session_ttl:
                if config.trace_dir is not None:
                    trace = trace_from_session(rec.session, rec.checkpoint_name,
                                               rec.preset)
                    save_trace(trace, config.trace_dir / f"{sid}.json")
                sessions.pop(sid, None)

    def get_record(sid: str) -> _SessionRecord:
        expire_sessions()
        rec = sessions.get(sid)
        if rec is None:
            raise NotFoundError(f"no session {sid!r}")
        rec.touch()
        return rec

    @app.exception_handler(SeqDesignError)
    async def handle_domain_error(request: Request, exc: SeqDesignError):
        status = _STATUS.get(exc.code, 400)
        return JSONResponse(status_code=status,
                            content={"api_version": API_VERSION,
                                     "error": {"code": exc.code, "message": str(exc)}})

    @app.get("/healthz")
    def healthz():
        return {"api_version": API_VERSION, "status": "ok",
                "checkpoints": sorted(config.checkpoints)}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict | None = None):
        body = body or {}
        expire_sessions()
        name = body.get("checkpoint") or config.default
        if name is None:
            raise CheckpointError("no checkpoint configured")
        mode = body.get("mode", "simulated")
        if mode not in ("simulated", "external"):
            raise ContractError(f"unknown mode {mode!r}")
        bundle, preset_key = load_bundle(name)
        seed = body.get("seed")
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "little")
        horizon = int(body.get("horizon") or bundle.preset.horizon)
        if horizon < 1 or horizon > bundle.preset.horizon:
            raise ContractError(
                f"horizon must lie in 1..{bundle.preset.horizon}")
        session = DeploySession(bundle.policy, bundle.summary, bundle.estimator,
                                bundle.sim, horizon=horizon, mode=mode,
                                seed=int(seed))
        sid = uuid.uuid4().hex
        sessions[sid] = _SessionRecord(session, str(name), preset_key)
        return _session_info(sid, sessions[sid])

    def _session_info(sid: str, rec: _SessionRecord) -> dict:
        session = rec.session
        spec = session.sim.spec
        out = {"api_version": API_VERSION, "session_id": sid, "t": session.t,
               "mode": session.mode, "seed": session.seed,
               "horizon": session.horizon, "preset": rec.preset,
               "design_dim": spec.design_dim,
               "obs_shape": list(spec.obs_shape),
               "theta_shape": list(spec.theta_shape),
               "simulator": spec.name,
               "pending_design": None if session.pending is None
               else session.pending.tolist()}
        if session.mode == "simulated":
            out["theta"] = encode_array(session.theta[0])
        return out

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        rec = get_record(sid)
        with rec.lock:
            return _session_info(sid, rec)

    @app.post("/sessions/{sid}/propose")
    def propose(sid: str):
        rec = get_record(sid)
        with rec.lock:
            design = rec.session.propose()
            return {"api_version": API_VERSION, "t": rec.session.t + 1,
                    "design": design.tolist()}

    @app.post("/sessions/{sid}/observe")
    def observe(sid: str, body: dict | None = None):
        body = body or {}
        rec = get_record(sid)
        with rec.lock:
            override = body.get("design_override")
            if override is not None:
                override = torch.tensor(override, dtype=torch.float32)
            observation = body.get("observation")
            if observation is not None:
                observation = decode_array(observation).reshape(
                    rec.session.sim.spec.obs_shape)
            result = rec.session.observe(observation=observation, override=override)
            h = rec.session.h
            return {"api_version": API_VERSION, "t": result["t"],
                    "design": result["design"].tolist(),
                    "design_source": result["design_source"],
                    "observation": encode_array(result["observation"]),
                    "h_digest": _digest(h),
                    "summary_stats": {"mean": h.mean().item(),
                                      "std": h.std().item()}}

    @app.get("/sessions/{sid}/posterior")
    def posterior(sid: str, n: int = 256, seed: int | None = None,
                  ode_steps: int | None = None):
        rec = get_record(sid)
        if n < 1 or n > config.max_posterior_samples:
            raise LimitError(
                f"n must lie in 1..{config.max_posterior_samples}")
        steps = ode_steps or config.posterior_ode_steps
        with rec.lock:
            key = (rec.session.t, n, seed, steps)
            if key not in rec.posterior_cache:
                samples = rec.session.posterior_samples(n, seed=seed, n_steps=steps)
                flat = samples.reshape(n, -1)
                rec.posterior_cache = {key: {
                    "api_version": API_VERSION, "t": rec.session.t, "n": n,
                    "seed": seed, "ode_steps": steps,
                    "theta_shape": list(rec.session.sim.spec.theta_shape),
                    "samples": encode_array(flat),
                    "mean": flat.mean(0).tolist(),
                    "std": flat.std(0).tolist()}}
            return rec.posterior_cache[key]

    @app.get("/sessions/{sid}/trace")
    def trace(sid: str):
        rec = get_record(sid)
        with rec.lock:
            out = trace_from_session(rec.session, rec.checkpoint_name, rec.preset)
            out["api_version"] = API_VERSION
            return out

    if config.static_dir is not None and Path(config.static_dir).is_dir():
        app.mount("/console", StaticFiles(directory=str(config.static_dir),
                                          html=True), name="console")

    return app
