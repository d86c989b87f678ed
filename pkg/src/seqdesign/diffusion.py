"""Generative posterior backends.

Two interchangeable corruption processes drive the posterior estimator: a
variance-preserving cosine schedule with v-prediction, and a linear
interpolation path with a constant velocity target (flow matching).  Both
share the forward marginal z_tau = alpha_tau * z0 + sigma_tau * eps and a
deterministic Euler sampler that integrates the probability-flow ODE from
tau = 1 (standard normal) down to tau = 0 (data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ContractError, DomainError

TAU_CLAMP = 1e-5  # keeps sigma_tau > 0 in score conversions


def _check_tau(tau: torch.Tensor) -> torch.Tensor:
    tau = torch.as_tensor(tau)
    if (tau < 0).any() or (tau > 1).any():
        raise DomainError("diffusion time must lie in [0, 1]")
    return tau


def _pad_like(coef: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Right-pad singleton dims so a per-instance coefficient broadcasts."""
    return coef.reshape(*coef.shape, *([1] * (ref.ndim - coef.ndim)))


class NoiseSchedule:
    """Corruption-process coefficients (alpha, sigma, log-SNR, loss weight)."""

    kind: str

    def alpha(self, tau):
        raise NotImplementedError

    def sigma(self, tau):
        raise NotImplementedError

    def logsnr(self, tau):
        a, s = self.alpha(tau), self.sigma(tau)
        return torch.log(a.square() / s.square())

    def weight(self, tau):
        # Uniform loss weighting; the schedule itself concentrates mass at
        # intermediate SNR.  Exposed as a hook for alternative weightings.
        return torch.ones_like(torch.as_tensor(tau))


class CosineVPSchedule(NoiseSchedule):
    """Variance preserving: alpha = cos(pi tau / 2), sigma = sin(pi tau / 2)."""

    kind = "cosine-vp"

    def alpha(self, tau):
        return torch.cos(0.5 * math.pi * _check_tau(tau))

    def sigma(self, tau):
        return torch.sin(0.5 * math.pi * _check_tau(tau))

    def logsnr(self, tau):
        return -2.0 * torch.log(torch.tan(0.5 * math.pi * _check_tau(tau)))

    def drift(self, tau):
        """f(tau) = alpha' / alpha, in closed form."""
        return -0.5 * math.pi * torch.tan(0.5 * math.pi * _check_tau(tau))

    def diffusion_sq(self, tau):
        """g(tau)^2 = 2 sigma (sigma' - f sigma), in closed form."""
        return math.pi * torch.tan(0.5 * math.pi * _check_tau(tau))


class FlowLinearSchedule(NoiseSchedule):
    """Linear path: alpha = 1 - tau, sigma = tau; velocity eps - z0."""

    kind = "flow-linear"

    def alpha(self, tau):
        return 1.0 - _check_tau(tau)

    def sigma(self, tau):
        return _check_tau(tau).clone()


def build_schedule(kind: str) -> NoiseSchedule:
    if kind in ("cosine-vp", "diffusion"):
        return CosineVPSchedule()
    if kind in ("flow-linear", "flow"):
        return FlowLinearSchedule()
    raise ContractError(f"unknown schedule kind {kind!r}")


def vp_coefficients(tau, schedule: NoiseSchedule | None = None):
    """(alpha_tau, sigma_tau) for a variance-preserving schedule."""
    schedule = schedule or CosineVPSchedule()
    return schedule.alpha(tau), schedule.sigma(tau)


@dataclass
class CorruptionDraw:
    """One (tau, eps) pair, reused at every step of a rollout trajectory."""

    tau: torch.Tensor   # (B,)
    eps: torch.Tensor   # (B, *theta_shape)


def sample_corruption(n: int, theta_shape: tuple, rng: torch.Generator,
                      tau_clamp: float = TAU_CLAMP) -> CorruptionDraw:
    """Draw tau ~ U(0,1) (clamped away from the endpoints) and eps ~ N(0,I)."""
    tau = torch.rand((n,), generator=rng).clamp(tau_clamp, 1.0 - tau_clamp)
    eps = torch.randn((n, *theta_shape), generator=rng)
    return CorruptionDraw(tau=tau, eps=eps)


def forward_perturb(z0: torch.Tensor, draw: CorruptionDraw,
                    schedule: NoiseSchedule) -> torch.Tensor:
    """z_tau = alpha_tau * z0 + sigma_tau * eps."""
    if draw.eps.shape != z0.shape:
        raise ContractError(
            f"eps shape {tuple(draw.eps.shape)} != z0 shape {tuple(z0.shape)}")
    a = _pad_like(schedule.alpha(draw.tau), z0)
    s = _pad_like(schedule.sigma(draw.tau), z0)
    return a * z0 + s * draw.eps


def v_target(z0: torch.Tensor, eps: torch.Tensor, tau,
             schedule: NoiseSchedule) -> torch.Tensor:
    """v = alpha_tau * eps - sigma_tau * z0 (variance-preserving only)."""
    if schedule.kind != "cosine-vp":
        raise ContractError("v-prediction targets require a variance-preserving "
                            "schedule; flow matching uses fm_velocity_target")
    tau = torch.as_tensor(tau)
    a = _pad_like(schedule.alpha(tau), z0)
    s = _pad_like(schedule.sigma(tau), z0)
    return a * eps - s * z0


def eps_from_v(v: torch.Tensor, z_tau: torch.Tensor, tau,
               schedule: NoiseSchedule) -> torch.Tensor:
    """eps_hat = sigma_tau * z_tau + alpha_tau * v."""
    tau = torch.as_tensor(tau)
    a = _pad_like(schedule.alpha(tau), z_tau)
    s = _pad_like(schedule.sigma(tau), z_tau)
    return s * z_tau + a * v


def score_from_eps(eps_hat: torch.Tensor, tau, schedule: NoiseSchedule) -> torch.Tensor:
    """score = -eps_hat / sigma_tau; undefined at tau = 0."""
    tau = torch.as_tensor(tau)
    s = schedule.sigma(tau)
    if (s <= 0).any():
        raise DomainError("score conversion requires sigma_tau > 0 (tau > 0)")
    return -eps_hat / _pad_like(s, eps_hat)


def _sum_square(t: torch.Tensor) -> torch.Tensor:
    return t.square().flatten(1).sum(-1)


def diffusion_posterior_loss(theta: torch.Tensor, h, draw: CorruptionDraw,
                             net, schedule: NoiseSchedule) -> torch.Tensor:
    """Per-instance loss w_tau * ||eps_hat(z_tau, h, tau) - eps||^2.

    `net` is a v-prediction head; gradients flow into both the net
    parameters and the conditioning summary `h`.
    """
    z_tau = forward_perturb(theta, draw, schedule)
    v = net(z_tau, h, draw.tau)
    eps_hat = eps_from_v(v, z_tau, draw.tau, schedule)
    w = schedule.weight(draw.tau)
    return w * _sum_square(eps_hat - draw.eps)


def fm_velocity_target(theta: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Constant velocity along the linear path: eps - theta."""
    return eps - theta


def fm_posterior_loss(theta: torch.Tensor, h, draw: CorruptionDraw, net,
                      schedule: NoiseSchedule | None = None) -> torch.Tensor:
    """Per-instance loss w_tau * ||v(z_tau, h, tau) - (eps - theta)||^2."""
    schedule = schedule or FlowLinearSchedule()
    z_tau = forward_perturb(theta, draw, schedule)
    v = net(z_tau, h, draw.tau)
    w = schedule.weight(draw.tau)
    return w * _sum_square(v - fm_velocity_target(theta, draw.eps))


@torch.no_grad()
def sample_posterior(net, h, n_samples: int, n_steps: int,
                     schedule: NoiseSchedule, rng: torch.Generator,
                     theta_shape: tuple, tau_clamp: float = TAU_CLAMP,
                     z_init: torch.Tensor | None = None) -> torch.Tensor:
    """Integrate the probability-flow ODE from tau=1 to tau=0 (explicit Euler).

    The diffusion backend converts the v-prediction to noise and score and
    steps drift f(tau) z - 0.5 g(tau)^2 score; the flow backend steps the
    predicted velocity field directly.  Returns (n_samples, *theta_shape)
    draws in the estimator's latent space.
    """
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    if z_init is not None:
        z = z_init.clone()
    else:
        z = torch.randn((n_samples, *theta_shape), generator=rng)
    dt = 1.0 / n_steps
    is_vp = schedule.kind == "cosine-vp"
    for k in range(n_steps, 0, -1):
        tau = torch.full((z.shape[0],), k / n_steps, dtype=z.dtype)
        tau_c = tau.clamp(tau_clamp, 1.0 - tau_clamp)
        if is_vp:
            v = net(z, h, tau_c)
            eps_hat = eps_from_v(v, z, tau_c, schedule)
            score = score_from_eps(eps_hat, tau_c, schedule)
            drift = _pad_like(schedule.drift(tau_c), z) * z \
                - 0.5 * _pad_like(schedule.diffusion_sq(tau_c), z) * score
        else:
            drift = net(z, h, tau_c)
        z = z - dt * drift
    return z


class PosteriorEstimator:
    """A prediction net plus its schedule and theta standardization.

    Presents the estimator in theta space: `step_loss` standardizes theta
    before corruption, `sample` maps latent draws back.  Re-entrant for
    reads; training mutates the net through exactly one owner.
    """

    def __init__(self, net, schedule: NoiseSchedule, theta_shape: tuple,
                 to_latent=None, from_latent=None, ode_steps: int = 1000,
                 tau_clamp: float = TAU_CLAMP):
        self.net = net
        self.schedule = schedule
        self.theta_shape = tuple(theta_shape)
        self.to_latent = to_latent or (lambda t: t)
        self.from_latent = from_latent or (lambda z: z)
        self.ode_steps = ode_steps
        self.tau_clamp = tau_clamp

    @property
    def kind(self) -> str:
        return "diffusion" if self.schedule.kind == "cosine-vp" else "flow"

    def sample_corruption(self, n: int, rng: torch.Generator) -> CorruptionDraw:
        return sample_corruption(n, self.theta_shape, rng, self.tau_clamp)

    def step_loss(self, theta: torch.Tensor, h, draw: CorruptionDraw) -> torch.Tensor:
        z0 = self.to_latent(theta)
        if self.kind == "diffusion":
            return diffusion_posterior_loss(z0, h, draw, self.net, self.schedule)
        return fm_posterior_loss(z0, h, draw, self.net, self.schedule)

    def sample(self, h, n_samples: int, rng: torch.Generator,
               n_steps: int | None = None) -> torch.Tensor:
        z = sample_posterior(self.net, h, n_samples, n_steps or self.ode_steps,
                             self.schedule, rng, self.theta_shape, self.tau_clamp)
        return self.from_latent(z)
