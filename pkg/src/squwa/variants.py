"""The full model and its ablation variants.

``VARIANT_BLOCKS`` encodes which blocks each variant contains.  RSQ has the full
block set but is fed uniform random SQIs instead of the quality model's.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from squwa.attention import SQAttention
from squwa.compositor import SCALES, SignalCompositor
from squwa.errors import ConfigError
from squwa.fusion import FeatureExtractor, Recurrent
from squwa.sq_model import SQModel, freeze

BLOCKS = ("sL_conv", "mL_conv", "xL_conv", "SC", "CNN", "LSTM", "SQ_attention")

_FULL = dict.fromkeys(BLOCKS, True)
VARIANT_BLOCKS = {
    "SQUWA": dict(_FULL),
    "NKS": {**_FULL, "sL_conv": False},
    "NKM": {**_FULL, "mL_conv": False},
    "NKL": {**_FULL, "xL_conv": False},
    "NSC": {**_FULL, "SC": False},
    "NFE": {**_FULL, "CNN": False},
    "NRN": {**_FULL, "LSTM": False},
    "NSQ": {**_FULL, "SQ_attention": False},
    "RSQ": dict(_FULL),
}
VARIANTS = tuple(VARIANT_BLOCKS)


@dataclass
class VariantConfig:
    variant: str = "SQUWA"
    flags: dict = field(default_factory=dict)
    sqi_source: str = "model"

    def __post_init__(self):
        if self.variant not in VARIANT_BLOCKS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.flags:
            self.flags = dict(VARIANT_BLOCKS[self.variant])
        if self.variant == "RSQ" and self.sqi_source == "model":
            self.sqi_source = "random"
        self.validate()

    def validate(self) -> None:
        if self.flags != VARIANT_BLOCKS[self.variant]:
            raise ConfigError(f"flags {self.flags} do not match the {self.variant} row")
        if self.sqi_source not in ("model", "random"):
            raise ConfigError(f"sqi_source must be 'model' or 'random', got {self.sqi_source!r}")
        if (self.variant == "RSQ") != (self.sqi_source == "random"):
            raise ConfigError("random SQIs are used by RSQ and only by RSQ")

    @classmethod
    def named(cls, name: str) -> "VariantConfig":
        return cls(variant=name)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelConfig:
    length: int = 2400
    kernel_lengths: tuple = (119, 479, 799)
    kernels_per_bank: int = 8
    subnet_filters: int = 8
    subnet_kernel: int = 31
    subnet_stride: int = 4
    fe_widths: tuple = (16, 32, 64, 128)
    fe_blocks: tuple = (2, 2, 2, 2)
    stem_kernel: int = 15
    block_kernel: int = 3
    hidden_size: int = 64
    pooling: str = "mean"
    normalize_channels: bool = True

    def __post_init__(self):
        self.kernel_lengths = tuple(self.kernel_lengths)
        self.fe_widths = tuple(self.fe_widths)
        self.fe_blocks = tuple(self.fe_blocks)

    @property
    def downsample(self) -> int:
        return 4 * 2 ** (len(self.fe_widths) - 1)

    @property
    def T(self) -> int:
        return self.length // self.downsample

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class ModelOutput(NamedTuple):
    logit: torch.Tensor  # (B,)
    attention: Optional[torch.Tensor]  # (B, T, T)
    sqi: torch.Tensor  # (B, T) as consumed by the classifier path
    hidden: Optional[torch.Tensor]  # (B, k, T)
    composite: torch.Tensor  # (B, L)
    component_weights: Optional[torch.Tensor]  # (B, n_components)

    @property
    def probability(self) -> torch.Tensor:
        return torch.sigmoid(self.logit)


class SQUWAModel(nn.Module):
    """Composite generation -> CNN -> LSTM -> SQ-attention, with a frozen quality branch.

    ``forward`` takes the (B, 3, L) stack of (raw, d1, d2) channels and an
    optional precomputed (B, T) SQI series; when absent the quality branch
    computes it from the raw channel.
    """

    def __init__(self, vc: Optional[VariantConfig] = None, mc: Optional[ModelConfig] = None,
                 sq_model: Optional[SQModel] = None):
        super().__init__()
        self.vc = vc or VariantConfig()
        self.mc = mc or ModelConfig()
        flags, mc = self.vc.flags, self.mc
        if mc.length % mc.downsample:
            raise ConfigError(f"length {mc.length} is not divisible by the downsampling factor {mc.downsample}")
        self.sq_model = freeze(sq_model if sq_model is not None else SQModel())
        if self.sq_model.downsample != mc.downsample:
            raise ConfigError(f"quality branch downsamples by {self.sq_model.downsample}, "
                              f"feature branch by {mc.downsample}")

        self.compositor = None
        if flags["SC"]:
            scales = [s for s, b in zip(SCALES, ("sL_conv", "mL_conv", "xL_conv")) if flags[b]]
            self.compositor = SignalCompositor(mc.kernel_lengths, mc.kernels_per_bank, scales,
                                               mc.subnet_filters, mc.subnet_kernel, mc.subnet_stride)
        self.features = None
        n_features = 1
        if flags["CNN"]:
            self.features = FeatureExtractor(mc.fe_widths, mc.fe_blocks, mc.stem_kernel, mc.block_kernel)
            n_features = self.features.out_channels
        self.recurrent = None
        if flags["LSTM"]:
            self.recurrent = Recurrent(n_features, mc.hidden_size)
        self.sq_attention = None
        self.head = None
        if flags["LSTM"] and flags["SQ_attention"]:
            self.sq_attention = SQAttention(mc.hidden_size, mc.T, mc.pooling)
        else:
            width = mc.hidden_size if flags["LSTM"] else n_features
            self.head = nn.Linear(width, 1)

    def train(self, mode: bool = True):
        super().train(mode)
        self.sq_model.eval()
        return self

    def blocks(self) -> set:
        """Names of the architectural blocks this instance contains."""
        present = set()
        if self.compositor is not None:
            present.add("SC")
            for s, b in zip(SCALES, ("sL_conv", "mL_conv", "xL_conv")):
                if s in self.compositor.scales:
                    present.add(b)
        else:
            # without the compositor the kernel banks are unused but the row keeps them
            present.update(("sL_conv", "mL_conv", "xL_conv"))
        if self.features is not None:
            present.add("CNN")
        if self.recurrent is not None:
            present.add("LSTM")
        if self.sq_attention is not None or (self.recurrent is None and self.vc.flags["SQ_attention"]):
            present.add("SQ_attention")
        return present

    def trainable_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("sq_model.")]

    @torch.no_grad()
    def quality_index(self, x: torch.Tensor) -> torch.Tensor:
        """SQI from the frozen quality branch, (B, T)."""
        return self.sq_model.sqi(x[:, :1])

    def forward(self, x: torch.Tensor, sqi: Optional[torch.Tensor] = None) -> ModelOutput:
        B = x.shape[0]
        if self.vc.sqi_source == "random":
            sqi = torch.rand(B, self.mc.T, dtype=x.dtype, device=x.device)
        elif sqi is None:
            sqi = self.quality_index(x)
        sqi = sqi.to(x.dtype)

        weights = None
        if self.compositor is not None:
            composite, weights, _ = self.compositor(x)
        else:
            composite = x[:, 0]

        if self.features is not None:
            feats = self.features(composite)
        else:
            feats = F.avg_pool1d(composite.unsqueeze(1), self.mc.downsample)

        hidden, atten = None, None
        if self.recurrent is not None:
            hidden = self.recurrent(feats)
            if self.sq_attention is not None:
                logit, atten, _ = self.sq_attention(hidden, sqi)
            else:
                logit = self.head(hidden.mean(dim=-1)).squeeze(-1)
        else:
            # quality-weighted temporal average in place of the recurrent layer
            w = torch.softmax(sqi, dim=-1)
            logit = self.head(torch.einsum("bt,bnt->bn", w, feats)).squeeze(-1)
        return ModelOutput(logit, atten, sqi, hidden, composite, weights)


def build_variant(vc: VariantConfig | str, mc: Optional[ModelConfig] = None,
                  sq_model: Optional[SQModel] = None) -> SQUWAModel:
    if isinstance(vc, str):
        vc = VariantConfig.named(vc)
    vc.validate()
    return SQUWAModel(vc, mc, sq_model)
