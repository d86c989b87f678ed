"""Rollout generation, the incremental-utility objective, and deployment.

The training objective accumulates per-step posterior losses along a
simulated design-observation trajectory.  At value level the utility
telescopes to minus the final loss, but the baseline terms are gradient
barriers, so the gradient aggregates every intermediate loss.  Designs are
produced from a barriered summary by default, which removes the nested
backpropagation-through-time path; an optional window barrier truncates
gradients through old tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .diffusion import CorruptionDraw, PosteriorEstimator
from .errors import ContractError, HorizonError, ProtocolError
from .simulators.base import Simulator

SOURCE_POLICY = 0
SOURCE_PRIOR = 1
SOURCE_HUMAN = 2
SOURCE_NAMES = {SOURCE_POLICY: "policy", SOURCE_PRIOR: "prior",
                SOURCE_HUMAN: "human-override"}


def barrier(x: torch.Tensor) -> torch.Tensor:
    """Value-preserving gradient barrier: equals x, blocks all gradients."""
    return x.detach()


def utility_from_losses(losses) -> torch.Tensor:
    """u_r = sum_t (barrier(l_{t-1}) - l_t) with l_{-1} = 0.

    At value level this equals -l_r; gradients see every term.
    """
    if len(losses) == 0:
        raise ContractError("utility needs at least the prior loss l_0")
    u = -losses[0]
    for prev, cur in zip(losses[:-1], losses[1:]):
        u = u + (barrier(prev) - cur)
    return u


# ---------------------------------------------------------------------------
# Curriculum schedules


def length_linear(n: int, n_ramp: int, start: int, end: int) -> int:
    """Rollout-length cap ramping linearly from `start` to `end`."""
    if n_ramp <= 0 or n >= n_ramp:
        return end
    frac = n / n_ramp
    return int(round(start + (end - start) * frac))


def explore_cosine(n: int, n_decay: int) -> float:
    """Exploration probability decaying from 1 to 0 over `n_decay` iterations."""
    if n_decay <= 0 or n >= n_decay:
        return 0.0
    return 0.5 * (1.0 + math.cos(math.pi * n / n_decay))


def build_length_schedule(desc: dict, horizon: int):
    kind = desc.get("kind", "constant")
    if kind == "constant":
        value = int(desc.get("value", horizon))
        return lambda n: value
    if kind == "linear":
        ramp, start = int(desc["ramp_iters"]), int(desc["start"])
        end = int(desc.get("end", horizon))
        return lambda n: length_linear(n, ramp, start, end)
    raise ContractError(f"unknown length schedule {kind!r}")


def build_explore_schedule(desc: dict):
    kind = desc.get("kind", "constant")
    if kind == "constant":
        value = float(desc.get("value", 0.0))
        return lambda n: value
    if kind == "cosine":
        decay = int(desc["decay_iters"])
        return lambda n: explore_cosine(n, decay)
    raise ContractError(f"unknown explore schedule {kind!r}")


@dataclass
class RolloutConfig:
    """Horizon, curricula, and the ablation switches of the training rollout."""

    horizon: int
    window: int | None = None
    nested_bptt: bool = False
    fixed_length: bool = False
    length_schedule: object = None    # iteration -> max rollout length
    explore_schedule: object = None   # iteration -> prior mix-in probability

    def __post_init__(self):
        if self.length_schedule is None:
            self.length_schedule = lambda n: self.horizon
        if self.explore_schedule is None:
            self.explore_schedule = lambda n: 0.0

    def max_length(self, iteration: int) -> int:
        r = int(self.length_schedule(iteration))
        return max(1, min(r, self.horizon))


@dataclass
class RolloutTrace:
    """Full record of one (batched) rollout."""

    theta: torch.Tensor
    designs: list = field(default_factory=list)        # live tensors, step 1..r
    observations: list = field(default_factory=list)
    summaries: list = field(default_factory=list)      # h_0 .. h_r
    losses: list = field(default_factory=list)         # l_0 .. l_r
    design_sources: list = field(default_factory=list)
    utility: torch.Tensor | None = None
    rollout_length: int = 0


def train_rollout(theta, policy, summary_net, posterior: PosteriorEstimator,
                  sim: Simulator, config: RolloutConfig, iteration: int,
                  rng: torch.Generator, draw: CorruptionDraw | None = None,
                  r: int | None = None):
    """One training rollout; returns (scalar loss, RolloutTrace).

    `theta` may be None (sampled from the prior, consuming `rng`).  One
    corruption draw is shared by every step of the trajectory.  The rollout
    length r is sampled uniformly from {1..R(iteration)} unless fixed or
    given.  RNG consumption order: theta, r, draw, then per step the
    exploration mask and prior designs (only if the mix-in probability is
    positive) followed by the simulator noise.
    """
    if theta is None:
        batch = 256
        theta = sim.sample_prior(batch, rng)
    batch = theta.shape[0]
    if r is None:
        if config.fixed_length:
            r = config.horizon
        else:
            cap = config.max_length(iteration)
            r = int(torch.randint(1, cap + 1, (1,), generator=rng).item())
    if r > config.horizon:
        raise HorizonError(f"rollout length {r} exceeds horizon {config.horizon}")
    if draw is None:
        draw = posterior.sample_corruption(batch, rng)

    trace = RolloutTrace(theta=theta)
    h = summary_net.empty_summary(batch)
    loss = posterior.step_loss(theta, h, draw)          # prior loss l_0
    u = -loss
    prev = barrier(loss)
    trace.summaries.append(h)
    trace.losses.append(loss)

    rho = config.explore_schedule(iteration)
    live_designs: list = []
    live_observations: list = []
    for t in range(1, r + 1):
        h_in = h if config.nested_bptt else barrier(h)
        xi = policy(h_in)
        if rho > 0:
            explore = torch.rand(batch, generator=rng) < rho
            xi_prior = sim.sample_design_prior(batch, rng)
            xi = torch.where(explore.unsqueeze(-1), xi_prior, xi)
            source = torch.where(explore, torch.tensor(SOURCE_PRIOR),
                                 torch.tensor(SOURCE_POLICY))
        else:
            source = torch.full((batch,), SOURCE_POLICY)
        noise = sim.sample_noise(batch, rng)
        x = sim.simulate(theta, xi, noise)

        live_designs.append(xi)
        live_observations.append(x)
        trace.designs.append(xi)
        trace.observations.append(x)
        trace.design_sources.append(source)
        if config.window is not None:
            # Token-window barrier: steps <= t - W no longer carry gradients.
            for k in range(t - config.window):
                live_designs[k] = barrier(live_designs[k])
                live_observations[k] = barrier(live_observations[k])

        h = summary_net(torch.stack(live_designs, dim=1),
                        torch.stack(live_observations, dim=1))
        loss = posterior.step_loss(theta, h, draw)
        u = u + (prev - loss)
        prev = barrier(loss)
        trace.summaries.append(h)
        trace.losses.append(loss)

    trace.utility = u
    trace.rollout_length = r
    return -u.mean(), trace


# ---------------------------------------------------------------------------
# Deployment


class DeploySession:
    """Gradient-free step-wise rollout of a frozen (policy, summary, posterior).

    The session alternates strictly between proposing a design and receiving
    an observation.  A proposal may be overridden before execution; the
    recorded source distinguishes policy designs from human overrides.  In
    simulated mode the session holds a hidden theta and generates
    observations itself; in external mode the caller supplies them.
    """

    def __init__(self, policy, summary_net, posterior: PosteriorEstimator,
                 sim: Simulator, horizon: int, mode: str = "simulated",
                 theta: torch.Tensor | None = None, seed: int = 0):
        if mode not in ("simulated", "external"):
            raise ContractError(f"unknown session mode {mode!r}")
        self.policy = policy
        self.summary_net = summary_net
        self.posterior = posterior
        self.sim = sim
        self.horizon = horizon
        self.mode = mode
        self.seed = seed
        # Separate streams so replaying with a stored theta leaves the
        # observation noise sequence unchanged.
        self.rng = torch.Generator().manual_seed(seed)
        theta_rng = torch.Generator().manual_seed((seed * 2_654_435_761 + 1) % 2 ** 62)
        if mode == "simulated":
            self.theta = theta if theta is not None else sim.sample_prior(1, theta_rng)
        else:
            self.theta = None
        self.h = summary_net.empty_summary(1)
        self.t = 0
        self.pending: torch.Tensor | None = None
        self.designs: list = []
        self.observations: list = []
        self.sources: list = []

    @torch.no_grad()
    def propose(self) -> torch.Tensor:
        if self.pending is not None:
            raise ProtocolError("a proposal is already pending an observation")
        if self.t >= self.horizon:
            raise HorizonError(f"horizon {self.horizon} reached")
        self.pending = self.policy(self.h)[0]
        return self.pending

    @torch.no_grad()
    def observe(self, observation: torch.Tensor | None = None,
                override: torch.Tensor | None = None) -> dict:
        if self.pending is None:
            raise ProtocolError("no pending proposal; call propose first")
        if override is not None:
            override = torch.as_tensor(override)
            if not override.is_floating_point():
                override = override.float()
            if override.shape != (self.sim.spec.design_dim,):
                raise ContractError(
                    f"override must have shape ({self.sim.spec.design_dim},)")
            if not self.sim.design_in_domain(override):
                raise ContractError("override design outside the design domain")
            xi = override
            source = SOURCE_HUMAN
        else:
            xi = self.pending
            source = SOURCE_POLICY
        if self.mode == "simulated":
            if observation is not None:
                raise ProtocolError("simulated sessions generate their own observations")
            noise = self.sim.sample_noise(1, self.rng)
            x = self.sim.simulate(self.theta, xi.unsqueeze(0), noise)[0]
        else:
            if observation is None:
                raise ProtocolError("external sessions require an observation")
            x = torch.as_tensor(observation)
            if not x.is_floating_point():
                x = x.float()
            expected = self.sim.spec.obs_shape
            if x.shape != expected:
                raise ContractError(
                    f"observation shape {tuple(x.shape)} != expected {expected}")

        self.designs.append(xi)
        self.observations.append(x)
        self.sources.append(source)
        self.t += 1
        self.pending = None
        self.h = self.summary_net(torch.stack(self.designs).unsqueeze(0),
                                  torch.stack(self.observations).unsqueeze(0))
        return {"t": self.t, "design": xi, "observation": x,
                "design_source": SOURCE_NAMES[source]}

    def posterior_samples(self, n: int, seed: int | None = None,
                          n_steps: int | None = None) -> torch.Tensor:
        """Draw n posterior samples at the current summary state."""
        if seed is None:
            seed = (self.seed * 1_000_003 + self.t) & 0x7FFFFFFF
        rng = torch.Generator().manual_seed(seed)
        h = self.h.expand(n, *self.h.shape[1:])
        with torch.no_grad():
            return self.posterior.sample(h, n, rng, n_steps)

    def auto_rollout(self, steps: int | None = None):
        """Run propose/observe to the horizon (simulated mode only)."""
        steps = self.horizon - self.t if steps is None else steps
        for _ in range(steps):
            self.propose()
            self.observe()
        return self

    def trace_dict(self) -> dict:
        """Serializable record of the session so far."""
        return {
            "mode": self.mode,
            "seed": self.seed,
            "horizon": self.horizon,
            "theta": None if self.theta is None else self.theta[0].tolist(),
            "designs": [d.tolist() for d in self.designs],
            "observations": [o.tolist() for o in self.observations],
            "design_sources": [SOURCE_NAMES[s] for s in self.sources],
        }
