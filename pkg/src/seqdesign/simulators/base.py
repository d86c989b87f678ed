"""Common simulator interface shared by the three benchmark forward models.

All simulators are pure functions over value inputs: randomness enters only
through explicitly passed noise draws (standard normal or standard uniform),
so identical inputs produce bitwise-identical outputs and evaluation is safe
from any number of concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..errors import ContractError, UnsupportedMetricError


@dataclass(frozen=True)
class SimulatorSpec:
    """Static description of one forward model."""

    name: str                      # "lf" | "ces" | "id"
    theta_dim: int                 # flattened parameter dimension
    theta_shape: tuple             # native parameter shape, e.g. (1, 28, 28)
    design_dim: int
    obs_shape: tuple               # () for scalar observations
    constants: dict = field(default_factory=dict)
    theta_prior: str = ""
    design_prior: str = ""

    @property
    def obs_dim(self) -> int:
        n = 1
        for s in self.obs_shape:
            n *= s
        return n

    @property
    def token_dim(self) -> int:
        """Per-step flat token width: design + observation + time index."""
        return self.design_dim + self.obs_dim + 1


@dataclass
class HistoryToken:
    """One executed experiment step: a design and its observed outcome."""

    design: torch.Tensor
    observation: torch.Tensor
    step_index: int

    def __post_init__(self):
        if self.step_index < 1:
            raise ContractError(f"step_index must be >= 1, got {self.step_index}")


class Simulator:
    """Base class; subclasses implement the actual forward model.

    Shape conventions: `theta` is (..., theta_dim) or (..., *theta_shape),
    `xi` is (..., design_dim), observations follow obs_shape with the same
    leading batch dims.  All leading dims broadcast.
    """

    spec: SimulatorSpec
    has_likelihood: bool = False

    # -- sampling ---------------------------------------------------------
    def sample_prior(self, n: int, rng: torch.Generator) -> torch.Tensor:
        raise NotImplementedError

    def sample_design_prior(self, n: int, rng: torch.Generator) -> torch.Tensor:
        raise NotImplementedError

    def sample_noise(self, n: int, rng: torch.Generator) -> torch.Tensor:
        """Standard noise draw consumed by `simulate` (shape matches obs)."""
        raise NotImplementedError

    # -- forward model ----------------------------------------------------
    def simulate(self, theta, xi, noise) -> torch.Tensor:
        raise NotImplementedError

    def log_likelihood(self, x, theta, xi) -> torch.Tensor:
        raise UnsupportedMetricError(
            f"simulator {self.spec.name!r} has no tractable likelihood"
        )

    # -- design domain ----------------------------------------------------
    def design_in_domain(self, xi: torch.Tensor) -> bool:
        raise NotImplementedError

    # -- latent-space standardization for the posterior estimator ---------
    def theta_to_latent(self, theta: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def latent_to_theta(self, z: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def flatten_obs(self, x: torch.Tensor) -> torch.Tensor:
        """Flatten an observation batch to (..., obs_dim) for token building."""
        if self.spec.obs_shape == ():
            return x.unsqueeze(-1)
        lead = x.shape[: x.ndim - len(self.spec.obs_shape)]
        return x.reshape(*lead, self.spec.obs_dim)


def check_finite(name: str, *tensors) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            from ..errors import DomainError

            raise DomainError(f"non-finite values in {name}")
