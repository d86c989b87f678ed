"""Location finding: infer K signal-emitting sources from intensity readings.

The noise-free signal at sensor position xi is the superposition of the K
source signals over a constant background; the observation is its log with
additive Gaussian noise.
"""

from __future__ import annotations

import math

import torch

from ..errors import DomainError
from .base import Simulator, SimulatorSpec, check_finite

BACKGROUND = 0.1          # b
MAX_INV_SIGNAL = 1e-4     # m, caps the signal at a source location
SOURCE_STRENGTH = 1.0     # alpha_k, identical for all sources
NOISE_SCALE = 0.5

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def signal_strength(theta: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
    """Total signal mu(theta, xi) = b + sum_k alpha / (m + ||theta_k - xi||^2).

    `theta` is (..., 2K) with sources flattened pairwise, `xi` is (..., 2);
    leading dims broadcast.  Strictly greater than the background level.
    """
    check_finite("signal_strength inputs", theta, xi)
    sources = theta.reshape(*theta.shape[:-1], -1, 2)
    sq_dist = (sources - xi.unsqueeze(-2)).square().sum(-1)
    return BACKGROUND + (SOURCE_STRENGTH / (MAX_INV_SIGNAL + sq_dist)).sum(-1)


def simulate(theta: torch.Tensor, xi: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Observation x = log mu(theta, xi) + noise_scale * noise."""
    return torch.log(signal_strength(theta, xi)) + NOISE_SCALE * noise


def log_likelihood(x: torch.Tensor, theta: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
    """Gaussian log-density of one observation; sum over steps for a history."""
    z = (x - torch.log(signal_strength(theta, xi))) / NOISE_SCALE
    return -0.5 * z.square() - math.log(NOISE_SCALE) - _LOG_SQRT_2PI


class LocationFindingSimulator(Simulator):
    """K-source location finding with a Gaussian or uniform source prior."""

    has_likelihood = True

    def __init__(self, num_sources: int = 2, prior: str = "normal",
                 design_low: float = -4.0, design_high: float = 4.0):
        if prior not in ("normal", "uniform"):
            raise DomainError(f"unknown LF prior {prior!r}")
        self.num_sources = num_sources
        self.prior = prior
        self.design_low = float(design_low)
        self.design_high = float(design_high)
        theta_dim = 2 * num_sources
        self.spec = SimulatorSpec(
            name="lf",
            theta_dim=theta_dim,
            theta_shape=(theta_dim,),
            design_dim=2,
            obs_shape=(),
            constants={
                "background": BACKGROUND,
                "max_inv_signal": MAX_INV_SIGNAL,
                "source_strength": SOURCE_STRENGTH,
                "noise_scale": NOISE_SCALE,
                "num_sources": num_sources,
            },
            theta_prior=prior,
            design_prior=f"uniform[{design_low},{design_high}]^2",
        )
        if prior == "normal":
            self._latent_mean, self._latent_std = 0.0, 1.0
        else:
            self._latent_mean, self._latent_std = 0.5, math.sqrt(1.0 / 12.0)

    def sample_prior(self, n, rng):
        shape = (n, self.spec.theta_dim)
        if self.prior == "normal":
            return torch.randn(shape, generator=rng)
        return torch.rand(shape, generator=rng)

    def sample_design_prior(self, n, rng):
        lo, hi = self.design_low, self.design_high
        return lo + (hi - lo) * torch.rand((n, 2), generator=rng)

    def sample_noise(self, n, rng):
        return torch.randn((n,), generator=rng)

    def simulate(self, theta, xi, noise):
        return simulate(theta, xi, noise)

    def log_likelihood(self, x, theta, xi):
        return log_likelihood(x, theta, xi)

    def design_in_domain(self, xi):
        # Sensor placement is unconstrained; only finiteness is required.
        return bool(torch.isfinite(xi).all())

    def theta_to_latent(self, theta):
        return (theta - self._latent_mean) / self._latent_std

    def latent_to_theta(self, z):
        return z * self._latent_std + self._latent_mean
