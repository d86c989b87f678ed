"""Spatial networks for image discovery: FiLM token encoder, a small U-Net
backbone shared by the history and posterior paths, and the ResNet+MLP policy.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ContractError
from .mlp import time_embedding


class FiLMBlock(nn.Module):
    """Conv block whose features are scaled/shifted by design-conditioned FiLM.

    With gamma = 1 and beta = 0 this reduces to the plain convolutional
    residual block.
    """

    def __init__(self, in_ch: int, mid_ch: int, out_ch: int,
                 cond_dim: int = 2, hidden: int = 128):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, mid_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(mid_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)
        self.residual = nn.Conv2d(in_ch, out_ch, 1)
        self.film = nn.Sequential(
            nn.Linear(cond_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 2 * out_ch))
        self.out_ch = out_ch

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        z = self.conv2(torch.relu(self.conv1(x)))
        z = self.bn(z)
        gamma, beta = self.film(cond).chunk(2, dim=-1)
        z = gamma[..., None, None] * z + beta[..., None, None]
        return torch.relu(z) + self.residual(x)


class FiLMEncoder(nn.Module):
    """Per-step feature map from one (design, observation) token."""

    def __init__(self, channels=(32, 32, 4), mid_ch: int = 32,
                 cond_dim: int = 2, hidden: int = 128):
        super().__init__()
        blocks = []
        in_ch = 1
        for out_ch in channels:
            blocks.append(FiLMBlock(in_ch, mid_ch, out_ch, cond_dim, hidden))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.out_ch = channels[-1]

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, cond)
        return x


class ResidualBlock(nn.Module):
    """norm -> SiLU -> conv -> norm -> SiLU -> conv, with identity skip."""

    def __init__(self, ch: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return x + h


class FuseBlock(nn.Module):
    """Residual block that merges skip features with the upsampled path."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.residual = nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.residual(x) + h


class SelfAttention2d(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.norm = nn.GroupNorm(1, ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)
        self.scale = ch ** -0.5

    def forward(self, x):
        b, c, hgt, wid = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, hgt * wid).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k * self.scale, dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, hgt, wid)
        return x + self.proj(out)


class SimpleUNet(nn.Module):
    """Two-stage U-Net with bottleneck self-attention.

    The down path alternates residual blocks and 2x2 downsampling; the up
    path mirrors it with 2x2 upsampling and a fuse block on the skip.
    """

    def __init__(self, in_ch: int, out_ch: int, stages=(8, 16), blocks=(4, 2)):
        super().__init__()
        self.in_ch = in_ch
        c0, c1 = stages
        self.stem = nn.Conv2d(in_ch, c0, 3, padding=1)
        self.down_blocks = nn.ModuleList(ResidualBlock(c0) for _ in range(blocks[0]))
        self.downsample = nn.Conv2d(c0, c1, 2, stride=2)
        self.inner_blocks = nn.ModuleList(ResidualBlock(c1) for _ in range(blocks[1]))
        self.attention = SelfAttention2d(c1)
        self.inner_blocks_up = nn.ModuleList(ResidualBlock(c1) for _ in range(blocks[1]))
        self.upsample = nn.ConvTranspose2d(c1, c0, 2, stride=2)
        self.fuse = FuseBlock(2 * c0, c0)
        self.up_blocks = nn.ModuleList(ResidualBlock(c0) for _ in range(blocks[0]))
        self.out_norm = nn.GroupNorm(1, c0)
        self.out_conv = nn.Conv2d(c0, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_ch:
            raise ContractError(f"expected {self.in_ch} input channels, got {x.shape[1]}")
        h = self.stem(x)
        for block in self.down_blocks:
            h = block(h)
        skip = h
        h = self.downsample(h)
        for block in self.inner_blocks:
            h = block(h)
        h = self.attention(h)
        for block in self.inner_blocks_up:
            h = block(h)
        h = self.upsample(h)
        h = self.fuse(torch.cat([skip, h], dim=1))
        for block in self.up_blocks:
            h = block(h)
        return self.out_conv(torch.nn.functional.silu(self.out_norm(h)))


class IDHistoryNet(nn.Module):
    """FiLM per-step features, summed over steps, refined by a U-Net."""

    def __init__(self, image_size: int, film_channels=(32, 32, 4),
                 film_mid: int = 32, film_hidden: int = 128,
                 stages=(8, 16), blocks=(4, 2), summary_channels: int = 16):
        super().__init__()
        self.image_size = image_size
        self.summary_channels = summary_channels
        self.summary_shape = (summary_channels, image_size, image_size)
        self.film = FiLMEncoder(film_channels, film_mid, cond_dim=2, hidden=film_hidden)
        self.unet = SimpleUNet(film_channels[-1], summary_channels, stages, blocks)

    def step_features(self, observations: torch.Tensor,
                      designs: torch.Tensor) -> torch.Tensor:
        """(B, t, 1, H, W) x (B, t, 2) -> per-step maps (B, t, C, H, W)."""
        b, t = designs.shape[:2]
        flat_obs = observations.reshape(b * t, *observations.shape[2:])
        flat_des = designs.reshape(b * t, 2)
        feats = self.film(flat_obs, flat_des)
        return feats.reshape(b, t, *feats.shape[1:])

    def forward(self, designs: torch.Tensor, observations: torch.Tensor) -> torch.Tensor:
        pooled = self.step_features(observations, designs).sum(dim=1)
        return self.unet(pooled)

    def empty_summary(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, *self.summary_shape)


class IDPosteriorNet(nn.Module):
    """Conditional U-Net over [z_tau, summary, broadcast time channel]."""

    def __init__(self, schedule, image_size: int, summary_channels: int = 16,
                 stages=(16, 32), blocks=(4, 2), time_hidden: int = 128,
                 time_dim: int = 4, logsnr_clamp: float = 1e-5):
        super().__init__()
        self.schedule = schedule
        self.image_size = image_size
        self.summary_channels = summary_channels
        self.time_dim = time_dim
        self.logsnr_clamp = logsnr_clamp
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_hidden), nn.SiLU(), nn.Linear(time_hidden, 1))
        self.unet = SimpleUNet(1 + summary_channels + 1, 1, stages, blocks)

    def forward(self, z: torch.Tensor, h: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        if z.shape[1:] != (1, self.image_size, self.image_size):
            raise ContractError(f"bad z shape {tuple(z.shape)}")
        if h.shape[1:] != (self.summary_channels, self.image_size, self.image_size):
            raise ContractError(f"bad summary shape {tuple(h.shape)}")
        lam = self.schedule.logsnr(tau.clamp(self.logsnr_clamp, 1 - self.logsnr_clamp))
        emb = self.time_mlp(time_embedding(lam.to(z.dtype), self.time_dim))
        tmap = emb[..., None, None].expand(-1, 1, self.image_size, self.image_size)
        return self.unet(torch.cat([z, h, tmap], dim=1))


class ResNetLayer(nn.Module):
    """Two 3x3 convs with batch norm plus a 1x1 projection skip."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.residual = nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x):
        h = torch.nn.functional.gelu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.nn.functional.gelu(h + self.residual(x))


class IDPolicyNet(nn.Module):
    """Downsampling ResNet over the spatial summary, then an MLP head.

    Outputs a design in [0, 1]^2; the head is zero-initialized so the first
    proposal sits at the image center.
    """

    def __init__(self, image_size: int, summary_channels: int = 16,
                 block1=(16, 16, 8), block2=(8, 8, 4),
                 mlp_width: int = 128, dropout: float = 0.05):
        super().__init__()
        layers1, in_ch = [], summary_channels
        for out_ch in block1:
            layers1.append(ResNetLayer(in_ch, out_ch))
            in_ch = out_ch
        self.block1 = nn.ModuleList(layers1)
        layers2 = []
        for out_ch in block2:
            layers2.append(ResNetLayer(in_ch, out_ch))
            in_ch = out_ch
        self.block2 = nn.ModuleList(layers2)
        self.pool = nn.MaxPool2d(2, stride=2, ceil_mode=True)
        pooled = -(-image_size // 2)
        pooled = -(-pooled // 2)
        flat = block2[-1] * pooled ** 2
        self.summary_shape = (summary_channels, image_size, image_size)
        self.fc1 = nn.Linear(flat, mlp_width)
        self.fc2 = nn.Linear(mlp_width, mlp_width)
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(mlp_width, 2)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[1:] != self.summary_shape:
            raise ContractError(
                f"expected summary {self.summary_shape}, got {tuple(h.shape[1:])}")
        x = h
        for layer in self.block1:
            x = layer(x)
        x = self.pool(x)
        for layer in self.block2:
            x = layer(x)
        x = self.pool(x).flatten(1)
        x = self.drop(torch.nn.functional.mish(self.fc1(x)))
        x = x + self.drop(torch.nn.functional.mish(self.fc2(x)))
        return torch.sigmoid(self.head(x))
