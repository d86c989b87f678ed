"""Policy, history, and posterior architectures behind uniform forward contracts.

History encoders expose `forward(designs, observations) -> summary` plus
`empty_summary(batch)`; policies map a summary to a design; posterior nets
map (z_tau, summary, tau) to a theta-shaped prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigError
from ..simulators.base import SimulatorSpec
from .image_nets import (
    FiLMBlock,
    FiLMEncoder,
    IDHistoryNet,
    IDPolicyNet,
    IDPosteriorNet,
    SimpleUNet,
)
from .mlp import MLPPolicy, MLPPosterior, count_parameters, time_embedding
from .transformer import HistoryTransformer


@dataclass
class PolicyConfig:
    backbone: str = "mlp"            # "mlp" | "resnet_mlp"
    hidden_width: int = 128
    hidden_layers: int = 4
    activation: str = "gelu"
    squash: str = "none"             # "none" | "sigmoid"
    squash_scale: float = 1.0
    dropout: float = 0.05            # resnet_mlp head only
    block1: tuple = (16, 16, 8)
    block2: tuple = (8, 8, 4)


@dataclass
class HistoryConfig:
    kind: str = "transformer"        # "transformer" | "film_unet"
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 2
    ff_dim: int | None = None        # defaults to 4 * d_model
    film_channels: tuple = (32, 32, 4)
    film_mid: int = 32
    film_hidden: int = 128
    stages: tuple = (8, 16)
    blocks: tuple = (4, 2)
    summary_channels: int = 16


@dataclass
class PosteriorNetConfig:
    kind: str = "mlp"                # "mlp" | "unet"
    hidden_width: int = 512
    hidden_layers: int = 3
    activation: str = "gelu"
    time_dim: int = 4
    stages: tuple = (16, 32)
    blocks: tuple = (4, 2)
    time_hidden: int = 128


class TransformerSummary(nn.Module):
    """Token assembly plus the transformer encoder for scalar experiments.

    Builds per-step inputs [design, observation, k/T] zero-padded to the
    training horizon and reads the encoder output at the current index.
    """

    def __init__(self, spec: SimulatorSpec, horizon: int, cfg: HistoryConfig):
        super().__init__()
        self.horizon = horizon
        self.obs_dim = spec.obs_dim
        self.design_dim = spec.design_dim
        self.encoder = HistoryTransformer(
            token_dim=spec.token_dim, horizon=horizon, d_model=cfg.d_model,
            n_layers=cfg.n_layers, n_heads=cfg.n_heads, ff_dim=cfg.ff_dim)
        self.summary_shape = self.encoder.summary_shape

    def build_tokens(self, designs: torch.Tensor, observations: torch.Tensor) -> torch.Tensor:
        b, t = designs.shape[:2]
        obs = observations.reshape(b, t, self.obs_dim)
        steps = torch.arange(1, t + 1, dtype=designs.dtype) / self.horizon
        steps = steps[None, :, None].expand(b, t, 1)
        body = torch.cat([designs, obs, steps], dim=-1)
        pad = torch.zeros(b, self.horizon - t, body.shape[-1], dtype=body.dtype)
        return torch.cat([body, pad], dim=1)

    def forward(self, designs: torch.Tensor, observations: torch.Tensor) -> torch.Tensor:
        t = designs.shape[1]
        if t > self.horizon:
            from ..errors import HorizonError

            raise HorizonError(f"{t} tokens exceed the training horizon {self.horizon}")
        return self.encoder(self.build_tokens(designs, observations), t)

    def empty_summary(self, batch: int) -> torch.Tensor:
        return self.encoder.empty_summary(batch)


def build_policy(cfg: PolicyConfig, spec: SimulatorSpec, summary_shape: tuple) -> nn.Module:
    if cfg.backbone == "mlp":
        if len(summary_shape) != 1:
            raise ConfigError("mlp policy expects a flat summary")
        return MLPPolicy(summary_dim=summary_shape[0], design_dim=spec.design_dim,
                         hidden_width=cfg.hidden_width, hidden_layers=cfg.hidden_layers,
                         act=cfg.activation, squash=cfg.squash,
                         squash_scale=cfg.squash_scale)
    if cfg.backbone == "resnet_mlp":
        channels, image_size = summary_shape[0], summary_shape[1]
        return IDPolicyNet(image_size=image_size, summary_channels=channels,
                           block1=tuple(cfg.block1), block2=tuple(cfg.block2),
                           mlp_width=cfg.hidden_width, dropout=cfg.dropout)
    raise ConfigError(f"unknown policy backbone {cfg.backbone!r}")


def build_history_encoder(cfg: HistoryConfig, spec: SimulatorSpec, horizon: int) -> nn.Module:
    if cfg.kind == "transformer":
        return TransformerSummary(spec, horizon, cfg)
    if cfg.kind == "film_unet":
        return IDHistoryNet(image_size=spec.theta_shape[-1],
                            film_channels=tuple(cfg.film_channels),
                            film_mid=cfg.film_mid, film_hidden=cfg.film_hidden,
                            stages=tuple(cfg.stages), blocks=tuple(cfg.blocks),
                            summary_channels=cfg.summary_channels)
    raise ConfigError(f"unknown history encoder kind {cfg.kind!r}")


def build_posterior_net(cfg: PosteriorNetConfig, spec: SimulatorSpec, schedule,
                        summary_shape: tuple) -> nn.Module:
    if cfg.kind == "mlp":
        return MLPPosterior(theta_dim=spec.theta_dim, summary_dim=summary_shape[0],
                            schedule=schedule, hidden_width=cfg.hidden_width,
                            hidden_layers=cfg.hidden_layers, act=cfg.activation,
                            time_dim=cfg.time_dim)
    if cfg.kind == "unet":
        return IDPosteriorNet(schedule=schedule, image_size=spec.theta_shape[-1],
                              summary_channels=summary_shape[0],
                              stages=tuple(cfg.stages), blocks=tuple(cfg.blocks),
                              time_hidden=cfg.time_hidden, time_dim=cfg.time_dim)
    raise ConfigError(f"unknown posterior net kind {cfg.kind!r}")


__all__ = [
    "FiLMBlock",
    "FiLMEncoder",
    "HistoryConfig",
    "HistoryTransformer",
    "IDHistoryNet",
    "IDPolicyNet",
    "IDPosteriorNet",
    "MLPPolicy",
    "MLPPosterior",
    "PolicyConfig",
    "PosteriorNetConfig",
    "SimpleUNet",
    "TransformerSummary",
    "build_history_encoder",
    "build_policy",
    "build_posterior_net",
    "count_parameters",
    "time_embedding",
]
