"""Constant elasticity of substitution: infer an agent's preference parameters.

The agent rates the subjective-utility difference between two baskets of
three goods; the rating passes a scaled Gaussian latent through a sigmoid and
is clipped away from {0, 1}, which puts point masses at the clip boundaries.
"""

from __future__ import annotations

import math

import torch

from ..errors import DomainError
from .base import Simulator, SimulatorSpec, check_finite

NOISE_FACTOR = 0.005      # tau_ces, latent noise scale factor
CLIP = 2.0 ** -22         # delta, observation clip margin
NUM_GOODS = 3
BASKET_MAX = 100.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def subjective_utility(basket: torch.Tensor, rho: torch.Tensor,
                       alpha: torch.Tensor) -> torch.Tensor:
    """CES utility U = (sum_k basket_k^rho * alpha_k)^(1/rho).

    `basket` and `alpha` are (..., 3), `rho` is (...).  Zero basket
    components contribute 0 (the rho -> limit value), avoiding NaN grads.
    """
    check_finite("subjective_utility inputs", basket, rho, alpha)
    if (rho <= 0).any():
        raise DomainError("rho must be positive (prior support is (0, 1))")
    if (basket < 0).any():
        raise DomainError("basket components must be non-negative")
    rho_e = rho.unsqueeze(-1)
    safe = torch.where(basket > 0, basket, torch.ones_like(basket))
    powed = torch.where(basket > 0, safe ** rho_e, torch.zeros_like(basket))
    return (powed * alpha).sum(-1) ** (1.0 / rho)


def _basket_distance(b1: torch.Tensor, b2: torch.Tensor) -> torch.Tensor:
    """||b1 - b2|| with the zero-subgradient convention at b1 == b2.

    A plain sqrt backward emits NaN at exactly coincident baskets, which the
    zero-initialized policy produces on the first training step.
    """
    sq = (b1 - b2).square().sum(-1)
    return torch.where(sq > 0, sq.clamp_min(1e-24).sqrt(), torch.zeros_like(sq))


def _latent_moments(theta: torch.Tensor, xi: torch.Tensor):
    """Mean and std of the pre-sigmoid latent for (theta, xi)."""
    rho, alpha, log_u = theta[..., 0], theta[..., 1:4], theta[..., 4]
    b1, b2 = xi[..., :NUM_GOODS], xi[..., NUM_GOODS:]
    u = torch.exp(log_u)
    mean = u * (subjective_utility(b1, rho, alpha) - subjective_utility(b2, rho, alpha))
    std = u * NOISE_FACTOR * (1.0 + _basket_distance(b1, b2))
    return mean, std


def simulate(theta: torch.Tensor, xi: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """x = clip(sigmoid(mean + std * noise), delta, 1 - delta)."""
    mean, std = _latent_moments(theta, xi)
    return torch.sigmoid(mean + std * noise).clamp(CLIP, 1.0 - CLIP)


def log_likelihood(x: torch.Tensor, theta: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
    """Censored sigmoid-normal log-density.

    Interior points carry the logit-Gaussian density with its Jacobian;
    observations at the clip boundaries carry the corresponding Gaussian
    tail mass (a point mass, not a density).
    """
    if (x < CLIP).any() or (x > 1.0 - CLIP).any():
        raise DomainError("observation outside [delta, 1 - delta]")
    mean, std = _latent_moments(theta, xi)
    x, mean, std = torch.broadcast_tensors(x, mean, std)

    logit = torch.logit(x)
    z = (logit - mean) / std
    interior = -0.5 * z.square() - torch.log(std) - _LOG_SQRT_2PI - torch.log(x * (1.0 - x))

    lo = math.log(CLIP / (1.0 - CLIP))     # logit(delta)
    low_mass = torch.special.log_ndtr((lo - mean) / std)
    high_mass = torch.special.log_ndtr((mean + lo) / std)   # logit(1-delta) = -lo

    out = torch.where(x <= CLIP, low_mass, interior)
    return torch.where(x >= 1.0 - CLIP, high_mass, out)


class CESSimulator(Simulator):
    """Two-basket preference elicitation over three goods."""

    has_likelihood = True

    def __init__(self):
        self.spec = SimulatorSpec(
            name="ces",
            theta_dim=5,
            theta_shape=(5,),
            design_dim=2 * NUM_GOODS,
            obs_shape=(),
            constants={"noise_factor": NOISE_FACTOR, "clip": CLIP,
                       "num_goods": NUM_GOODS, "basket_max": BASKET_MAX},
            theta_prior="rho~Beta(1,1), alpha~Dirichlet(1,1,1), log_u~N(1,9)",
            design_prior="uniform[0,100]^6",
        )
        # Component means/stds of the stated priors, used to standardize
        # theta before the posterior estimator sees it.
        self._latent_mean = torch.tensor([0.5, 1 / 3, 1 / 3, 1 / 3, 1.0])
        self._latent_std = torch.tensor(
            [math.sqrt(1 / 12), math.sqrt(1 / 18), math.sqrt(1 / 18), math.sqrt(1 / 18), 3.0]
        )

    def sample_prior(self, n, rng):
        rho = torch.rand((n, 1), generator=rng)
        # Dirichlet(1,1,1) via normalized exponentials.
        e = -torch.log(torch.rand((n, NUM_GOODS), generator=rng))
        alpha = e / e.sum(-1, keepdim=True)
        log_u = 1.0 + 3.0 * torch.randn((n, 1), generator=rng)
        return torch.cat([rho, alpha, log_u], dim=-1)

    def sample_design_prior(self, n, rng):
        return BASKET_MAX * torch.rand((n, 2 * NUM_GOODS), generator=rng)

    def sample_noise(self, n, rng):
        return torch.randn((n,), generator=rng)

    def simulate(self, theta, xi, noise):
        return simulate(theta, xi, noise)

    def log_likelihood(self, x, theta, xi):
        return log_likelihood(x, theta, xi)

    def design_in_domain(self, xi):
        return bool(torch.isfinite(xi).all()
                    and (xi >= 0).all() and (xi <= BASKET_MAX).all())

    def theta_to_latent(self, theta):
        return (theta - self._latent_mean.to(theta)) / self._latent_std.to(theta)

    def latent_to_theta(self, z):
        return z * self._latent_std.to(z) + self._latent_mean.to(z)
