"""Drive a live rollout session against the HTTP service, with an override.

Starts the service in-process against a freshly trained tiny checkpoint,
walks a full session step by step (accepting proposals except one human
override), samples the posterior at each step, and finally verifies the
recorded trace replays byte-identically.

Run:  python3 demos/04_rollout_service.py
"""

from fastapi.testclient import TestClient

from seqdesign.presets import preset_from_config, scale_preset
from seqdesign.service import ServiceConfig, create_app
from seqdesign.simulators import builtin_config
from seqdesign.traces import replay_trace
from seqdesign.training import bundle_from_checkpoint, run_training

print("training a tiny checkpoint for the demo session...")
preset = scale_preset(preset_from_config(builtin_config(), "lf-desk"), 0.1)
result = run_training(preset, "/tmp/seqdesign-service-demo", quiet=True,
                      checkpoint_every_epoch=False)

config = ServiceConfig(checkpoints={"default": str(result.checkpoint)},
                       posterior_ode_steps=64)
client = TestClient(create_app(config))

session = client.post("/sessions", json={"seed": 7}).json()
sid = session["session_id"]
print(f"session {sid[:8]}…  horizon {session['horizon']}  "
      f"hidden theta {session['theta']}")

for t in range(1, session["horizon"] + 1):
    proposal = client.post(f"/sessions/{sid}/propose").json()["design"]
    if t == 2:
        override = [0.0, 0.0]
        out = client.post(f"/sessions/{sid}/observe",
                          json={"design_override": override}).json()
        print(f"step {t}: proposed {proposal} -> OVERRIDDEN to {override}")
    else:
        out = client.post(f"/sessions/{sid}/observe", json={}).json()
        print(f"step {t}: accepted design {[round(v, 3) for v in out['design']]}")
    post = client.get(f"/sessions/{sid}/posterior",
                      params={"n": 256, "seed": 1}).json()
    mean = [round(v, 3) for v in post["mean"]]
    std = [round(v, 3) for v in post["std"]]
    print(f"        observation {out['observation']:.3f}  "
          f"posterior mean {mean} std {std}  [source: {out['design_source']}]")

trace = client.get(f"/sessions/{sid}/trace").json()
bundle, _ = bundle_from_checkpoint(result.checkpoint)
replay = replay_trace(trace, bundle)
print(f"\ntrace: {len(trace['steps'])} steps, sources "
      f"{[s['design_source'] for s in trace['steps']]}")
print("replay byte-identical:", replay["ok"])
