"""MLP-based policy and posterior heads for scalar-observation experiments."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ContractError

_ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "mish": nn.Mish, "silu": nn.SiLU}


def activation(name: str) -> nn.Module:
    try:
        return _ACTIVATIONS[name]()
    except KeyError:
        raise ContractError(f"unknown activation {name!r}") from None


def time_embedding(logsnr: torch.Tensor, dim: int = 4) -> torch.Tensor:
    """Sinusoidal embedding of the log-SNR, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.tensor([10.0 ** (-2 * i) for i in range(half)],
                         dtype=logsnr.dtype, device=logsnr.device)
    ang = logsnr[:, None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class MLPPolicy(nn.Module):
    """Maps a summary vector to a design, with an optional range squash.

    Hidden blocks are linear -> activation -> layer norm; the output layer is
    zero-initialized so the first proposals start at the design-domain center
    after the squash.
    """

    def __init__(self, summary_dim: int, design_dim: int, hidden_width: int = 128,
                 hidden_layers: int = 4, act: str = "gelu",
                 squash: str = "none", squash_scale: float = 1.0):
        super().__init__()
        if squash not in ("none", "sigmoid"):
            raise ContractError(f"unknown squash {squash!r}")
        self.summary_dim = summary_dim
        self.squash = squash
        self.squash_scale = squash_scale
        layers = []
        width_in = summary_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width_in, hidden_width), activation(act),
                       nn.LayerNorm(hidden_width)]
            width_in = hidden_width
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width_in, design_dim)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.summary_dim:
            raise ContractError(
                f"summary dim {h.shape[-1]} != expected {self.summary_dim}")
        out = self.head(self.body(h))
        if self.squash == "sigmoid":
            out = torch.sigmoid(out) * self.squash_scale
        return out


class MLPPosterior(nn.Module):
    """Prediction head (z_tau, h_t, tau) -> theta-shaped output.

    Concatenates the noisy parameter, the summary, and a sinusoidal log-SNR
    embedding; `schedule` supplies the log-SNR reparameterization of tau.
    """

    def __init__(self, theta_dim: int, summary_dim: int, schedule,
                 hidden_width: int = 512, hidden_layers: int = 3,
                 act: str = "gelu", time_dim: int = 4,
                 logsnr_clamp: float = 1e-5):
        super().__init__()
        self.theta_dim = theta_dim
        self.summary_dim = summary_dim
        self.schedule = schedule
        self.time_dim = time_dim
        self.logsnr_clamp = logsnr_clamp
        layers = []
        width_in = theta_dim + summary_dim + time_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width_in, hidden_width), activation(act)]
            width_in = hidden_width
        layers.append(nn.Linear(width_in, theta_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, h: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.theta_dim or h.shape[-1] != self.summary_dim:
            raise ContractError(
                f"posterior net got z dim {z.shape[-1]} (want {self.theta_dim}), "
                f"h dim {h.shape[-1]} (want {self.summary_dim})")
        lam = self.schedule.logsnr(tau.clamp(self.logsnr_clamp, 1 - self.logsnr_clamp))
        emb = time_embedding(lam.to(z.dtype), self.time_dim)
        return self.net(torch.cat([z, h, emb], dim=-1))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
