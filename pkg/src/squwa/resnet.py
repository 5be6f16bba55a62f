"""1-D residual CNN backbone shared by the feature and quality branches.

Downsampling: stride-2 stem, stride-2 max-pool, then stages with strides
(1, 2, 2, 2).  With four stages the total factor is 32, so both branches
stay aligned on the same T-step grid.
"""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from squwa.errors import ConfigError


class BasicBlock1d(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(cin, cout, kernel, stride=stride, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(cout)
        self.conv2 = nn.Conv1d(cout, cout, kernel, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv1d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm1d(cout),
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNet1d(nn.Module):
    def __init__(self, in_channels: int = 1, widths: Sequence[int] = (16, 32, 64, 128),
                 blocks: Sequence[int] = (2, 2, 2, 2), stem_kernel: int = 15, block_kernel: int = 7):
        super().__init__()
        if len(widths) != len(blocks) or not widths:
            raise ConfigError("widths and blocks must have the same nonzero length")
        self.stem = nn.Sequential(
            nn.Conv1d(in_channels, widths[0], stem_kernel, stride=2, padding=stem_kernel // 2, bias=False),
            nn.BatchNorm1d(widths[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool1d(3, stride=2, padding=1),
        )
        layers = []
        cin = widths[0]
        for i, (w, n) in enumerate(zip(widths, blocks)):
            for j in range(n):
                stride = 2 if (i > 0 and j == 0) else 1
                layers.append(BasicBlock1d(cin, w, stride, block_kernel))
                cin = w
        self.layers = nn.Sequential(*layers)
        self.out_channels = cin
        self.downsample = 4 * 2 ** (len(widths) - 1)
        for m in self.modules():
            if isinstance(m, nn.Conv1d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C_in, L) -> (B, C_out, L / downsample)."""
        return self.layers(self.stem(x))
