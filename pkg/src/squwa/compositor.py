"""Multi-scale decomposition of (raw, d1, d2) and attention-weighted recombination.

Each (channel, scale) bank is ``m`` same-padded filters of one length followed
by a 1x1 collapse to a single component.  There is no nonlinearity between
the two, so the bank is evaluated by folding the collapse into one effective
kernel per bank; the result is identical to running all ``m`` filters and is
``m`` times cheaper.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from squwa.errors import ConfigError, ShapeError

CHANNELS = ("raw", "d1", "d2")
SCALES = ("S", "M", "L")


class CompositeOutput(NamedTuple):
    values: torch.Tensor  # (B, L)
    component_weights: torch.Tensor  # (B, n_components), on the simplex
    components: torch.Tensor  # (B, n_components, L)


class KernelBank(nn.Module):
    def __init__(self, length: int, m: int):
        super().__init__()
        if length % 2 == 0:
            raise ConfigError(f"kernel length must be odd, got {length}")
        self.length = length
        self.weight = nn.Parameter(torch.empty(m, length))
        self.bias = nn.Parameter(torch.empty(m))
        self.collapse = nn.Parameter(torch.empty(m))
        self.collapse_bias = nn.Parameter(torch.zeros(()))
        bound = 1.0 / math.sqrt(length)
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)
        nn.init.uniform_(self.collapse, -1.0 / math.sqrt(m), 1.0 / math.sqrt(m))

    def effective(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.collapse @ self.weight, self.collapse @ self.bias + self.collapse_bias


class SignalCompositor(nn.Module):
    def __init__(self, kernel_lengths: Sequence[int] = (119, 479, 799), kernels_per_bank: int = 8,
                 scales: Sequence[str] = SCALES, subnet_filters: int = 8, subnet_kernel: int = 31,
                 subnet_stride: int = 4, weight_mode: str = "record"):
        super().__init__()
        if len(kernel_lengths) != 3:
            raise ConfigError("need exactly three kernel lengths (S, M, L)")
        if weight_mode != "record":
            # "timestep" would emit a components x L softmax; not implemented
            raise NotImplementedError(f"weight_mode={weight_mode!r}: only 'record' is implemented")
        unknown = set(scales) - set(SCALES)
        if unknown or not scales:
            raise ConfigError(f"bad scales {scales}")
        self.scales = tuple(s for s in SCALES if s in scales)
        self.lengths = {s: int(k) for s, k in zip(SCALES, kernel_lengths)}
        self.banks = nn.ModuleDict({
            f"{c}_{s}": KernelBank(self.lengths[s], kernels_per_bank)
            for c in CHANNELS for s in self.scales
        })
        self.subnet_conv = nn.Conv1d(1, subnet_filters, subnet_kernel, stride=subnet_stride)
        self.subnet_fc = nn.Linear(subnet_filters, self.n_components)

    @property
    def n_components(self) -> int:
        return len(CHANNELS) * len(self.scales)

    @property
    def bank_names(self) -> list[str]:
        return [f"{c}_{s}" for c in CHANNELS for s in self.scales]

    def decompose(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, L) channels -> (B, n_components, L), ordered channel-major.

        Same-padded cross-correlation of each channel with its banks' folded
        kernels, evaluated with one FFT per channel.
        """
        if x.ndim != 3 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, L) input, got {tuple(x.shape)}")
        n = x.shape[-1]
        kmax = max(self.lengths[s] for s in self.scales)
        kernels, biases = [], []
        for c in CHANNELS:
            row_k, row_b = [], []
            for s in self.scales:
                k, b = self.banks[f"{c}_{s}"].effective()
                pad = (kmax - k.shape[0]) // 2
                row_k.append(F.pad(k, (pad, pad)))
                row_b.append(b)
            kernels.append(torch.stack(row_k))
            biases.append(torch.stack(row_b))
        kernels = torch.stack(kernels).to(x.dtype)  # (3, n_scales, kmax)
        biases = torch.stack(biases).to(x.dtype)  # (3, n_scales)
        nfft = _fft_size(n + kmax - 1)
        spec = torch.fft.rfft(x, nfft).unsqueeze(2) * torch.fft.rfft(kernels.flip(-1), nfft)
        full = torch.fft.irfft(spec, nfft)
        half = kmax // 2
        out = full[..., kmax - 1 - half:kmax - 1 - half + n] + biases[..., None]
        return out.flatten(1, 2)

    def decompose_direct(self, x: torch.Tensor) -> torch.Tensor:
        """Reference path: every bank's m filters, then the 1x1 collapse."""
        comps = []
        for c_i, c in enumerate(CHANNELS):
            for s in self.scales:
                bank = self.banks[f"{c}_{s}"]
                filt = F.conv1d(x[:, c_i:c_i + 1], bank.weight.unsqueeze(1), bank.bias,
                                padding=bank.length // 2)
                comps.append(torch.einsum("m,bml->bl", bank.collapse, filt) + bank.collapse_bias)
        return torch.stack(comps, dim=1)

    def component_weights(self, raw: torch.Tensor) -> torch.Tensor:
        """Softmax weights over components from the raw channel, (B, n_components)."""
        if raw.ndim == 2:
            raw = raw.unsqueeze(1)
        h = F.relu(self.subnet_conv(raw)).mean(dim=-1)
        return torch.softmax(self.subnet_fc(h), dim=-1)

    def forward(self, x: torch.Tensor) -> CompositeOutput:
        components = self.decompose(x)
        w = self.component_weights(x[:, :1])
        return CompositeOutput(attend_components(components, w), w, components)


def _fft_size(n: int) -> int:
    """Smallest 2^a 3^b 5^c >= n."""
    best = 1 << (n - 1).bit_length()
    p5 = 1
    while p5 < best:
        p35 = p5
        while p35 < best:
            m = p35
            while m < n:
                m *= 2
            best = min(best, m)
            p35 *= 3
        p5 *= 5
    return best


def attend_components(components: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Convex combination ``sum_i w_i * component_i`` per record."""
    if components.ndim != 3 or weights.shape != components.shape[:2]:
        raise ShapeError(f"components {tuple(components.shape)} vs weights {tuple(weights.shape)}")
    return torch.einsum("bc,bcl->bl", weights, components)
