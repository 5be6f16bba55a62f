"""Signal-quality branch: a residual CNN classifier and its class activation map.

The quality classifier sees the z-normalized raw channel and predicts
good (index 0) versus bad (index 1).  Its class activation map, squashed to
[0, 1], is the SQI series that keys the attention layer.  Two squashings are
available: per-record min-max scaling of the good-class CAM (``"minmax"``) and
a sigmoid of the good-minus-bad CAM (``"sigmoid"``, the default).
"""
from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from squwa.core import PPGRecord
from squwa.errors import ConfigError, ConvergenceWarning
from squwa.resnet import ResNet1d
from squwa.signal import network_input, znormalize

log = logging.getLogger(__name__)

GOOD = 0
BAD = 1
SQI_NORMALIZATIONS = ("minmax", "sigmoid")


@dataclass
class SQModelConfig:
    widths: tuple = (16, 32, 64, 64)
    # (3, 4, 6, 3) gives the 34-layer topology
    blocks: tuple = (2, 2, 2, 2)
    stem_kernel: int = 15
    block_kernel: int = 7
    sqi_normalization: str = "sigmoid"

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.blocks = tuple(self.blocks)
        if self.sqi_normalization not in SQI_NORMALIZATIONS:
            raise ConfigError(f"sqi_normalization must be one of {SQI_NORMALIZATIONS}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class SQModel(nn.Module):
    def __init__(self, cfg: Optional[SQModelConfig] = None):
        super().__init__()
        self.cfg = cfg or SQModelConfig()
        self.backbone = ResNet1d(1, self.cfg.widths, self.cfg.blocks, self.cfg.stem_kernel, self.cfg.block_kernel)
        self.classifier = nn.Linear(self.backbone.out_channels, 2)

    @property
    def downsample(self) -> int:
        return self.backbone.downsample

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 1, L) raw -> (quality logits (B, 2), feature map (B, C, T))."""
        fmap = self.backbone(x)
        return self.classifier(fmap.mean(dim=-1)), fmap

    def sqi(self, x: torch.Tensor) -> torch.Tensor:
        _, fmap = self(x)
        w, b = self.classifier.weight, self.classifier.bias
        if self.cfg.sqi_normalization == "sigmoid":
            return calibrated_sqi(fmap, w, GOOD, b)
        return cam_sqi(fmap, w, GOOD, b)


def class_activation_map(feature_map: torch.Tensor, w_cls: torch.Tensor, class_index: int,
                         bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Raw CAM ``sum_c W[class, c] * F[c, t]`` (+ bias); its mean over t is the logit."""
    cam = torch.einsum("c,...ct->...t", w_cls[class_index], feature_map)
    if bias is not None:
        cam = cam + bias[class_index]
    return cam


def cam_sqi(feature_map: torch.Tensor, w_cls: torch.Tensor, good_class_index: int = GOOD,
            bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Per-record min-max normalized good-class CAM in [0, 1]; flat CAM -> 0.5."""
    cam = class_activation_map(feature_map, w_cls, good_class_index, bias)
    lo = cam.min(dim=-1, keepdim=True).values
    hi = cam.max(dim=-1, keepdim=True).values
    span = hi - lo
    flat = span <= 1e-12 * torch.clamp(hi.abs(), min=1.0)
    sqi = (cam - lo) / torch.where(flat, torch.ones_like(span), span)
    return torch.where(flat, torch.full_like(sqi, 0.5), sqi).clamp(0.0, 1.0)


def calibrated_sqi(feature_map: torch.Tensor, w_cls: torch.Tensor, good_class_index: int = GOOD,
                   bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Sigmoid of the good-minus-bad CAM.

    The contrast CAM averages to the record's good-vs-bad log-odds, so each
    value reads as local quality evidence and 0.5 is the decision boundary.
    Unlike min-max scaling, a uniformly clean record stays near 1.
    """
    bad = 1 - good_class_index
    cam = class_activation_map(feature_map, w_cls, good_class_index, bias) \
        - class_activation_map(feature_map, w_cls, bad, bias)
    return torch.sigmoid(cam)


@dataclass
class SQTrainConfig:
    epochs: int = 8
    batch_size: int = 64
    lr: float = 1e-3
    bad_threshold: float = 0.2
    seed: int = 0
    min_accuracy: float = 0.8


@dataclass
class SQTrainReport:
    val_accuracy: float
    history: list = field(default_factory=list)


def quality_label(r: PPGRecord, bad_threshold: float = 0.2) -> int:
    return BAD if r.corruption_fraction > bad_threshold else GOOD


def _raw_batch(records: Sequence[PPGRecord]) -> torch.Tensor:
    return torch.from_numpy(np.stack([znormalize(r.samples) for r in records]).astype(np.float32)).unsqueeze(1)


@torch.no_grad()
def quality_accuracy(model: SQModel, records: Sequence[PPGRecord], bad_threshold: float = 0.2,
                     batch_size: int = 256) -> float:
    model.eval()
    correct = 0
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        logits, _ = model(_raw_batch(chunk))
        y = torch.tensor([quality_label(r, bad_threshold) for r in chunk])
        correct += int((logits.argmax(dim=1) == y).sum())
    return correct / max(1, len(records))


def train_sq(train_records: Sequence[PPGRecord], val_records: Sequence[PPGRecord],
             tc: Optional[SQTrainConfig] = None, model_cfg: Optional[SQModelConfig] = None) -> tuple[SQModel, SQTrainReport]:
    """Fit the quality classifier on record-level good/bad labels derived from masks.

    Returns the model frozen (eval mode, no gradients) holding the weights of
    the epoch with the best held-out accuracy.
    """
    tc = tc or SQTrainConfig()
    torch.manual_seed(tc.seed)
    model = SQModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    x_all = _raw_batch(train_records) if train_records else None
    y_all = torch.tensor([quality_label(r, tc.bad_threshold) for r in train_records])
    gen = torch.Generator().manual_seed(tc.seed)
    history = []
    best_acc, best_state = -1.0, copy.deepcopy(model.state_dict())
    for epoch in range(tc.epochs):
        model.train()
        order = torch.randperm(len(train_records), generator=gen)
        total = 0.0
        for i in range(0, len(order), tc.batch_size):
            idx = order[i:i + tc.batch_size]
            if len(idx) < 2:
                continue
            logits, _ = model(x_all[idx])
            loss = nn.functional.cross_entropy(logits, y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        acc = quality_accuracy(model, val_records, tc.bad_threshold)
        history.append({"epoch": epoch + 1, "train_loss": total / max(1, len(order)), "val_accuracy": acc})
        log.info("sq epoch %d loss %.4f val acc %.4f", epoch + 1, history[-1]["train_loss"], acc)
        if acc > best_acc:
            best_acc, best_state = acc, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    acc = quality_accuracy(model, val_records, tc.bad_threshold) if val_records else float("nan")
    if not acc >= tc.min_accuracy:
        warnings.warn(f"quality model validation accuracy {acc:.3f} < {tc.min_accuracy}", ConvergenceWarning)
    freeze(model)
    return model, SQTrainReport(acc, history)


def freeze(model: nn.Module) -> nn.Module:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


@torch.no_grad()
def record_sqi(model: SQModel, r: PPGRecord) -> np.ndarray:
    x = torch.from_numpy(network_input(r)[:1]).unsqueeze(0)
    model.eval()
    return model.sqi(x)[0].numpy()
