"""Training loop, checkpointing, and evaluation dispatch for presets.

Every batch reseeds its generators from (master seed, global step), so runs
are reproducible bitwise, any batch can be regenerated in isolation from its
step seed, and resuming from a checkpoint only needs weights, optimizer
state, and the step counter.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import emit_config, parse_config
from .diffusion import PosteriorEstimator, build_schedule
from .errors import CheckpointError, ConfigError, TrainingDiverged, UnsupportedMetricError
from .evaluation import (
    PolicyDesigner,
    RandomDesigner,
    RandomSummaryDesigner,
    eval_id_curves,
    spce,
)
from .networks import build_history_encoder, build_policy, build_posterior_net
from .presets import ExperimentPreset, preset_from_config, scale_preset
from .rollout import RolloutConfig, build_explore_schedule, length_linear, train_rollout
from .simulators import build_simulator, builtin_config

CHECKPOINT_VERSION = 1


def step_seed(master_seed: int, global_step: int, stream: int = 0) -> int:
    """Distinct, reproducible per-step seed for a named random stream."""
    return (master_seed * 1_000_003 + global_step * 7 + stream * 40_009) % (2 ** 62)


@dataclass
class ExperimentBundle:
    """Everything needed to run rollouts for one preset."""

    preset: ExperimentPreset
    sim: object
    policy: torch.nn.Module
    summary: torch.nn.Module
    estimator: PosteriorEstimator

    def eval_mode(self):
        self.policy.eval()
        self.summary.eval()
        self.estimator.net.eval()
        return self

    def train_mode(self):
        self.policy.train()
        self.summary.train()
        self.estimator.net.train()
        return self

    def parameters(self):
        yield from self.policy.parameters()
        yield from self.summary.parameters()
        yield from self.estimator.net.parameters()


def build_bundle(preset: ExperimentPreset, doc=None, corpus_path=None) -> ExperimentBundle:
    """Construct simulator and networks; net init is seeded by the preset."""
    doc = builtin_config() if doc is None else doc
    sim = build_simulator(preset.simulator, doc, corpus_path)
    schedule = build_schedule(preset.posterior_kind)
    torch.manual_seed(preset.seed)
    summary = build_history_encoder(preset.history, sim.spec, preset.horizon)
    policy = build_policy(preset.policy, sim.spec, summary.summary_shape)
    net = build_posterior_net(preset.posterior_net, sim.spec, schedule,
                              summary.summary_shape)
    estimator = PosteriorEstimator(
        net=net, schedule=schedule, theta_shape=sim.spec.theta_shape,
        to_latent=sim.theta_to_latent, from_latent=sim.latent_to_theta,
        ode_steps=preset.ode_steps, tau_clamp=preset.tau_clamp)
    return ExperimentBundle(preset=preset, sim=sim, policy=policy,
                            summary=summary, estimator=estimator)


# ---------------------------------------------------------------------------
# Learning-rate schedules


def build_lr_fn(desc: dict, total_iters: int):
    kind = desc.get("kind")
    if kind == "constant":
        value = float(desc["value"])
        return lambda i: value
    if kind == "ramp-cosine":
        ramp = max(1, int(round(desc["ramp_frac"] * total_iters)))
        start, peak, end = float(desc["start"]), float(desc["peak"]), float(desc["end"])

        def fn(i):
            if i < ramp:
                return start + (peak - start) * (i / ramp)
            if i == ramp:
                return peak
            span = max(1, total_iters - 1 - ramp)
            frac = min(1.0, (i - ramp) / span)
            return end + (peak - end) * 0.5 * (1.0 + math.cos(math.pi * frac))

        return fn
    if kind == "one-cycle":
        peak = float(desc["peak"])
        start = peak / float(desc.get("div", 10.0))
        end = peak / float(desc.get("final_div", 1e4))
        ramp = max(1, int(round(desc.get("ramp_frac", 0.05) * total_iters)))

        def fn(i):
            if i < ramp:
                return start + (peak - start) * (i / ramp)
            if i == ramp:
                return peak
            span = max(1, total_iters - 1 - ramp)
            frac = min(1.0, (i - ramp) / span)
            return end + (peak - end) * 0.5 * (1.0 + math.cos(math.pi * frac))

        return fn
    raise ConfigError(f"unknown lr schedule {kind!r}")


def build_optimizer(preset: ExperimentPreset, params):
    spec = preset.optimizer
    if spec.kind == "adam":
        return torch.optim.Adam(params, lr=1e-3, betas=tuple(spec.betas),
                                eps=spec.eps, weight_decay=spec.weight_decay)
    if spec.kind == "adamw":
        return torch.optim.AdamW(params, lr=1e-3, betas=tuple(spec.betas),
                                 eps=spec.eps, weight_decay=spec.weight_decay)
    raise ConfigError(f"unknown optimizer {spec.kind!r}")


def _phase_plan(preset: ExperimentPreset):
    steps_per_epoch = max(1, preset.instances_per_epoch // preset.batch_size)
    plan = []
    for idx, phase in enumerate(preset.phases):
        plan.append({"index": idx, "phase": phase,
                     "steps": phase.epochs * steps_per_epoch})
    total = sum(p["steps"] for p in plan)
    return steps_per_epoch, plan, total


def _length_schedule_fn(preset: ExperimentPreset, total_steps: int):
    desc = preset.rollout.length_schedule
    kind = desc.get("kind", "constant")
    if kind == "constant":
        return lambda n: preset.horizon
    if kind == "linear":
        ramp = max(1, int(round(desc["ramp_frac"] * total_steps)))
        start = int(desc.get("start", 1))
        return lambda n: length_linear(n, ramp, start, preset.horizon)
    raise ConfigError(f"unknown length schedule {kind!r}")


def _explore_fn(phase, phase_steps: int):
    desc = dict(phase.explore)
    if desc.get("kind") == "cosine" and "decay_frac" in desc:
        desc = {"kind": "cosine",
                "decay_iters": max(1, int(round(desc["decay_frac"] * phase_steps)))}
    return build_explore_schedule(desc)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, bundle: ExperimentBundle, optimizer, progress: dict,
                    loss_curve: list):
    sim = bundle.sim
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "preset_key": bundle.preset.key,
        "preset_config": emit_config(bundle.preset.to_config()),
        "preset_hash": bundle.preset.hash(),
        "state": {
            "policy": bundle.policy.state_dict(),
            "summary": bundle.summary.state_dict(),
            "posterior": bundle.estimator.net.state_dict(),
        },
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "progress": progress,
        "loss_curve": loss_curve,
        "standardization": {
            "theta_prior": sim.spec.theta_prior,
            "constants": sim.spec.constants,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload.get('format_version')!r} unsupported")
    return payload


def bundle_from_checkpoint(path, doc=None, corpus_path=None,
                           expected_preset: ExperimentPreset | None = None,
                           force: bool = False):
    """Rebuild the frozen bundle stored in a checkpoint."""
    payload = load_checkpoint(path)
    stored = parse_config(payload["preset_config"])
    preset = preset_from_config(stored, payload["preset_key"])
    if expected_preset is not None and not force \
            and expected_preset.hash() != payload["preset_hash"]:
        raise CheckpointError(
            "checkpoint preset hash does not match the requested preset "
            "(pass force=True to override)")
    bundle = build_bundle(preset, doc=doc, corpus_path=corpus_path)
    bundle.policy.load_state_dict(payload["state"]["policy"])
    bundle.summary.load_state_dict(payload["state"]["summary"])
    bundle.estimator.net.load_state_dict(payload["state"]["posterior"])
    bundle.eval_mode()
    return bundle, payload


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_path: Path
    loss_curve: list
    epoch_means: list


def run_training(preset: ExperimentPreset, out_dir, scale: float = 1.0,
                 doc=None, corpus_path=None, resume=None, log_every: int = 50,
                 checkpoint_every_epoch: bool = True, quiet: bool = False) -> TrainResult:
    """Execute the preset's phases; writes checkpoints and a metrics log.

    Aborts with a diagnostic dump (step seed included) on a non-finite loss.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preset = scale_preset(preset, scale)
    bundle = build_bundle(preset, doc=doc, corpus_path=corpus_path)
    optimizer = build_optimizer(preset, list(bundle.parameters()))

    steps_per_epoch, plan, total_steps = _phase_plan(preset)
    length_fn = _length_schedule_fn(preset, total_steps)

    start_epoch = 0
    loss_curve: list = []
    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["preset_hash"] != preset.hash():
            raise CheckpointError("resume checkpoint belongs to a different preset")
        bundle.policy.load_state_dict(payload["state"]["policy"])
        bundle.summary.load_state_dict(payload["state"]["summary"])
        bundle.estimator.net.load_state_dict(payload["state"]["posterior"])
        optimizer.load_state_dict(payload["optimizer"])
        start_epoch = payload["progress"]["epochs_done"]
        loss_curve = list(payload["loss_curve"])

    metrics_path = out_dir / "metrics.csv"
    metrics_mode = "a" if resume is not None and metrics_path.exists() else "w"
    metrics_file = open(metrics_path, metrics_mode, newline="")
    writer = csv.writer(metrics_file)
    if metrics_mode == "w":
        writer.writerow(["phase", "epoch", "step", "loss", "lr"])

    bundle.train_mode()
    data_rng = torch.Generator()
    epoch_means = []
    global_epoch = 0
    global_step = 0
    t0 = time.time()
    final_path = out_dir / "final.pt"
    try:
        for entry in plan:
            phase = entry["phase"]
            lr_fn = build_lr_fn(phase.lr, entry["steps"])
            explore_fn = _explore_fn(phase, entry["steps"])
            rollout_cfg = RolloutConfig(
                horizon=preset.horizon, window=preset.rollout.window,
                nested_bptt=preset.rollout.nested_bptt,
                fixed_length=preset.rollout.fixed_length,
                length_schedule=length_fn, explore_schedule=None)
            for epoch in range(phase.epochs):
                if global_epoch < start_epoch:
                    global_epoch += 1
                    global_step += steps_per_epoch
                    continue
                epoch_losses = []
                for local in range(steps_per_epoch):
                    phase_step = epoch * steps_per_epoch + local
                    seed = step_seed(preset.seed, global_step)
                    data_rng.manual_seed(seed)
                    torch.manual_seed(step_seed(preset.seed, global_step, stream=1))
                    lr = lr_fn(phase_step)
                    for group in optimizer.param_groups:
                        group["lr"] = lr
                    rho = explore_fn(phase_step)
                    rollout_cfg.explore_schedule = lambda n, _rho=rho: _rho
                    theta = bundle.sim.sample_prior(preset.batch_size, data_rng)
                    loss, _ = train_rollout(
                        theta, bundle.policy, bundle.summary, bundle.estimator,
                        bundle.sim, rollout_cfg, iteration=global_step, rng=data_rng)
                    if not torch.isfinite(loss):
                        dump = {"step": global_step, "epoch": global_epoch,
                                "step_seed": seed, "loss": float(loss.detach())}
                        (out_dir / "diverged.json").write_text(json.dumps(dump))
                        raise TrainingDiverged(
                            f"non-finite loss at step {global_step} "
                            f"(batch seed {seed})", batch_seed=seed,
                            step=global_step)
                    optimizer.zero_grad()
                    loss.backward()
                    if preset.grad_clip is not None:
                        torch.nn.utils.clip_grad_norm_(
                            list(bundle.parameters()), preset.grad_clip)
                    optimizer.step()
                    loss_curve.append(loss.item())
                    epoch_losses.append(loss.item())
                    if global_step % log_every == 0:
                        writer.writerow([phase.name, global_epoch, global_step,
                                         f"{loss.item():.6f}", f"{lr:.3e}"])
                        if not quiet:
                            print(f"[{phase.name}] epoch {global_epoch} "
                                  f"step {global_step} loss {loss.item():.4f} "
                                  f"lr {lr:.2e} ({time.time() - t0:.0f}s)")
                    global_step += 1
                mean = sum(epoch_losses) / len(epoch_losses)
                epoch_means.append(mean)
                writer.writerow([phase.name, global_epoch, global_step,
                                 f"epoch_mean={mean:.6f}", ""])
                metrics_file.flush()
                global_epoch += 1
                if checkpoint_every_epoch:
                    save_checkpoint(out_dir / f"ckpt-epoch{global_epoch:04d}.pt",
                                    bundle, optimizer,
                                    {"epochs_done": global_epoch,
                                     "global_step": global_step},
                                    loss_curve)
        save_checkpoint(final_path, bundle, optimizer,
                        {"epochs_done": global_epoch, "global_step": global_step},
                        loss_curve)
    finally:
        metrics_file.close()
    bundle.eval_mode()
    return TrainResult(checkpoint=final_path, metrics_path=metrics_path,
                       loss_curve=loss_curve, epoch_means=epoch_means)


# ---------------------------------------------------------------------------
# Evaluation dispatch


def run_eval(ckpt_path, metric: str, out_dir=None, horizon: int | None = None,
             horizons=None, contrastive_size: int = 10_000, n_outer: int = 500,
             samples_per_step: int = 8, sampler_steps: int | None = None,
             max_images: int | None = 64, seed: int = 0, doc=None,
             corpus_path=None, expected_preset=None, force: bool = False,
             quiet: bool = False):
    """Evaluate a checkpoint; returns result rows and writes a CSV table.

    Always includes the random-design baseline computed from the same
    checkpoint (prior sampling replaces the policy at evaluation time).
    """
    bundle, payload = bundle_from_checkpoint(ckpt_path, doc=doc,
                                             corpus_path=corpus_path,
                                             expected_preset=expected_preset,
                                             force=force)
    preset = bundle.preset
    steps = horizon or preset.horizon
    rows = []
    if metric == "spce":
        if not bundle.sim.has_likelihood:
            raise UnsupportedMetricError(
                f"sPCE unsupported for simulator {bundle.sim.spec.name!r}")
        hs = sorted(horizons or [steps])
        designers = [("learned", PolicyDesigner(bundle.policy, bundle.summary)),
                     ("random", RandomDesigner())]
        for label, designer in designers:
            rng = torch.Generator().manual_seed(seed)
            res = spce(bundle.sim, designer, contrastive_size, n_outer, steps,
                       rng, horizons=hs)
            for h in hs:
                rows.append({"preset": preset.key, "policy": label,
                             "metric": "spce", "horizon": h,
                             "mean": res.means[h], "se": res.ses[h],
                             "q25": "", "q75": "", "L": contrastive_size,
                             "L0": n_outer, "seed": seed})
    elif metric == "ssim-nrmse":
        if bundle.sim.spec.name != "id":
            raise UnsupportedMetricError("ssim-nrmse is an image-posterior metric")
        images = bundle.sim.validation_images()
        if max_images is not None:
            images = images[:max_images]
        designers = [("learned", PolicyDesigner(bundle.policy, bundle.summary)),
                     ("random", RandomSummaryDesigner(bundle.summary))]
        for label, designer in designers:
            rng = torch.Generator().manual_seed(seed)
            curves = eval_id_curves(designer, bundle.estimator, bundle.sim,
                                    images, steps, samples_per_step, rng,
                                    sampler_steps=sampler_steps)
            for row in curves.rows(label):
                rows.append({"preset": preset.key, "policy": row["policy"],
                             "metric": row["metric"], "horizon": row["step"],
                             "mean": row["mean"], "se": "",
                             "q25": row["q25"], "q75": row["q75"],
                             "L": samples_per_step, "L0": len(images),
                             "seed": seed})
    else:
        raise ConfigError(f"unknown metric {metric!r}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table = out_dir / f"{metric}.csv"
        with open(table, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["preset", "policy", "metric",
                                                    "horizon", "mean", "se",
                                                    "q25", "q75", "L", "L0", "seed"])
            writer.writeheader()
            writer.writerows(rows)
        if not quiet:
            print(f"wrote {table}")
    return rows
