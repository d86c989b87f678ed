"""Small reference models shared by evaluation and acceptance tests."""

import torch

from seqdesign.simulators.base import Simulator, SimulatorSpec


class GaussianShiftSim(Simulator):
    """x = theta + xi + eps with theta ~ N(0,1), eps ~ N(0,1).

    The one-step expected information gain of any fixed design is
    0.5 * log(1 + prior_var / noise_var) = 0.5 * log 2.
    """

    has_likelihood = True

    def __init__(self):
        self.spec = SimulatorSpec(name="gauss-shift", theta_dim=1, theta_shape=(1,),
                                  design_dim=1, obs_shape=())

    def sample_prior(self, n, rng):
        return torch.randn(n, 1, generator=rng)

    def sample_design_prior(self, n, rng):
        return torch.rand(n, 1, generator=rng)

    def sample_noise(self, n, rng):
        return torch.randn(n, generator=rng)

    def simulate(self, theta, xi, noise):
        return theta[..., 0] + xi[..., 0] + noise

    def log_likelihood(self, x, theta, xi):
        z = x - theta[..., 0] - xi[..., 0]
        return -0.5 * z.square() - 0.9189385332046727  # log sqrt(2 pi)

    def design_in_domain(self, xi):
        return bool(torch.isfinite(xi).all())

    def theta_to_latent(self, theta):
        return theta

    def latent_to_theta(self, z):
        return z


class ExtremeLikelihoodSim(GaussianShiftSim):
    """Log-likelihoods pinned to +-500 to probe log-space accumulation."""

    def log_likelihood(self, x, theta, xi):
        sign = torch.where(theta[..., 0] > 0, 500.0, -500.0)
        return sign + 0.0 * x


class OracleImagePosterior:
    """Posterior stub returning the true images it was primed with."""

    def __init__(self, truth: torch.Tensor):
        self.truth = truth

    def sample(self, h, n, rng, n_steps=None):
        reps = n // self.truth.shape[0]
        return self.truth.repeat_interleave(reps, dim=0)
