"""Transformer history encoder for variable-length design-observation sequences."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ContractError, HorizonError

# The encoder's inference fastpath computes attention through a fused kernel
# that is numerically different from the training path, which would break the
# bitwise train/deploy parity contract for summaries.
try:
    torch.backends.mha.set_fastpath_enabled(False)
except AttributeError:
    pass


class HistoryTransformer(nn.Module):
    """Encodes the padded token sequence and reads the summary at index t.

    Per-step inputs are [design, observation, k/T], zero-padded to the fixed
    maximum horizon; a padding mask keeps attention off the padded slots, so
    the summary at index t is invariant to their content.
    """

    def __init__(self, token_dim: int, horizon: int, d_model: int = 64,
                 n_layers: int = 4, n_heads: int = 2, ff_dim: int | None = None):
        super().__init__()
        self.token_dim = token_dim
        self.horizon = horizon
        self.d_model = d_model
        self.summary_shape = (d_model,)
        self.proj = nn.Linear(token_dim, d_model)
        self.positions = nn.Parameter(0.02 * torch.randn(horizon, d_model))
        layer = nn.TransformerEncoderLayer(
            d_model=d_model, nhead=n_heads,
            dim_feedforward=ff_dim if ff_dim is not None else 4 * d_model,
            dropout=0.0, activation="gelu", batch_first=True)
        # The nested-tensor fast path only triggers under no_grad and would
        # break bitwise parity between training and deployment forwards.
        self.encoder = nn.TransformerEncoder(layer, num_layers=n_layers,
                                             enable_nested_tensor=False)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, tokens: torch.Tensor, t: int) -> torch.Tensor:
        """tokens (B, horizon, token_dim), fill beyond step t arbitrary."""
        if tokens.ndim != 3 or tokens.shape[1] != self.horizon \
                or tokens.shape[2] != self.token_dim:
            raise ContractError(
                f"expected tokens (B, {self.horizon}, {self.token_dim}), "
                f"got {tuple(tokens.shape)}")
        if not 1 <= t <= self.horizon:
            raise HorizonError(f"summary index {t} outside 1..{self.horizon}")
        x = self.proj(tokens) + self.positions
        pad = torch.zeros(tokens.shape[0], self.horizon, dtype=torch.bool,
                          device=tokens.device)
        pad[:, t:] = True
        encoded = self.encoder(x, src_key_padding_mask=pad)
        return self.out(encoded[:, t - 1])

    def empty_summary(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.d_model)
