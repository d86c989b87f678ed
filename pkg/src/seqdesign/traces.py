"""Rollout trace records: self-describing, versioned, replayable.

A trace is JSON with small vectors as plain number arrays and image-sized
tensors as base64-packed little-endian float32, so a stored trace round
trips bit-exactly through serialization and through re-execution.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from .errors import ContractError
from .rollout import SOURCE_HUMAN, SOURCE_NAMES, DeploySession

TRACE_VERSION = 1
_B64_THRESHOLD = 16  # tensors larger than this are base64-packed


def encode_array(t: torch.Tensor):
    t = torch.as_tensor(t)
    if t.numel() <= _B64_THRESHOLD and t.ndim <= 1:
        return t.tolist() if t.ndim else t.item()
    arr = t.detach().cpu().numpy().astype("<f4")
    return {"b64": base64.b64encode(arr.tobytes()).decode("ascii"),
            "shape": list(arr.shape), "dtype": "<f4"}


def decode_array(obj) -> torch.Tensor:
    if isinstance(obj, dict):
        if obj.get("dtype") != "<f4":
            raise ContractError(f"unsupported packed dtype {obj.get('dtype')!r}")
        raw = base64.b64decode(obj["b64"])
        arr = np.frombuffer(raw, dtype="<f4").reshape(obj["shape"]).copy()
        return torch.from_numpy(arr)
    return torch.tensor(obj, dtype=torch.float32)


def trace_from_session(session: DeploySession, checkpoint: str | None = None,
                       preset: str | None = None) -> dict:
    steps = []
    for i in range(session.t):
        steps.append({
            "t": i + 1,
            "design": session.designs[i].tolist(),
            "observation": encode_array(session.observations[i]),
            "design_source": SOURCE_NAMES[session.sources[i]],
        })
    return {
        "trace_version": TRACE_VERSION,
        "checkpoint": checkpoint,
        "preset": preset,
        "mode": session.mode,
        "seed": session.seed,
        "horizon": session.horizon,
        "theta": None if session.theta is None else encode_array(session.theta[0]),
        "steps": steps,
    }


def save_trace(trace: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(trace))
    return path


def load_trace(path) -> dict:
    trace = json.loads(Path(path).read_text())
    if trace.get("trace_version") != TRACE_VERSION:
        raise ContractError(f"unsupported trace version {trace.get('trace_version')!r}")
    return trace


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def replay_trace(trace: dict, bundle) -> dict:
    """Re-execute a trace against a bundle and compare byte-for-byte.

    Simulated traces regenerate observations from the stored theta and seed;
    external traces replay the recorded observations.  Human overrides are
    re-applied; policy steps assert the regenerated proposal matches.
    Returns {"ok": bool, "mismatches": [...], "regenerated": trace}.
    """
    trace = {k: v for k, v in trace.items() if k != "api_version"}
    theta = None if trace["theta"] is None else decode_array(trace["theta"]).unsqueeze(0)
    session = DeploySession(bundle.policy, bundle.summary, bundle.estimator,
                            bundle.sim, horizon=trace["horizon"],
                            mode=trace["mode"], theta=theta, seed=trace["seed"])
    mismatches = []
    for step in trace["steps"]:
        proposal = session.propose()
        stored = torch.tensor(step["design"], dtype=proposal.dtype)
        if step["design_source"] == SOURCE_NAMES[SOURCE_HUMAN]:
            kwargs = {"override": stored}
        else:
            if not torch.equal(proposal, stored):
                mismatches.append({"t": step["t"], "field": "design",
                                   "stored": step["design"],
                                   "replayed": proposal.tolist()})
            kwargs = {}
        if trace["mode"] == "external":
            kwargs["observation"] = decode_array(step["observation"]).reshape(
                bundle.sim.spec.obs_shape)
        session.observe(**kwargs)
        replayed_obs = encode_array(session.observations[-1])
        if canonical_json(replayed_obs) != canonical_json(step["observation"]):
            mismatches.append({"t": step["t"], "field": "observation"})
    regenerated = trace_from_session(session, checkpoint=trace.get("checkpoint"),
                                     preset=trace.get("preset"))
    ok = not mismatches and canonical_json(regenerated) == canonical_json(trace)
    return {"ok": ok, "mismatches": mismatches, "regenerated": regenerated}
