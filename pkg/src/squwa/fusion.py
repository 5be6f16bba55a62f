"""Feature branch: residual CNN over the composite signal, then a one-directional LSTM."""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from squwa.errors import ShapeError
from squwa.resnet import ResNet1d


class FeatureExtractor(nn.Module):
    """(B, L) or (B, 1, L) composite -> (B, n, T) features."""

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 128), blocks: Sequence[int] = (2, 2, 2, 2),
                 stem_kernel: int = 15, block_kernel: int = 7):
        super().__init__()
        self.net = ResNet1d(1, widths, blocks, stem_kernel, block_kernel)

    @property
    def out_channels(self) -> int:
        return self.net.out_channels

    @property
    def downsample(self) -> int:
        return self.net.downsample

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 2:
            x = x.unsqueeze(1)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, L) composite, got {tuple(x.shape)}")
        return self.net(x)


class Recurrent(nn.Module):
    """One-directional single-layer LSTM with zero initial state.

    Takes features as (B, n, T) and returns every hidden state as (B, k, T).
    """

    def __init__(self, n_features: int, hidden_size: int = 64):
        super().__init__()
        self.lstm = nn.LSTM(n_features, hidden_size, batch_first=True)
        self.hidden_size = hidden_size

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 3 or features.shape[1] != self.lstm.input_size:
            raise ShapeError(f"expected (B, {self.lstm.input_size}, T) features, got {tuple(features.shape)}")
        out, _ = self.lstm(features.transpose(1, 2))
        return out.transpose(1, 2)


def lstm_cell_step(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """Single LSTM step written out gate by gate (gate order i, f, g, o)."""
    gates = x @ w_ih.T + b_ih + h @ w_hh.T + b_hh
    i, f, g, o = gates.chunk(4, dim=-1)
    c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return h, c
