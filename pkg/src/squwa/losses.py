"""Binary classification losses, including label-noise-robust objectives.

All functions take predicted AF probabilities ``p`` and (possibly soft)
targets ``y`` of the same shape and return per-record losses when
``reduction="none"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from squwa.errors import ConfigError

EPS = 1e-7
LOSSES = ("bce", "sce", "gce", "jol")


def _reduce(loss: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    if reduction == "none":
        return loss
    raise ValueError(f"unknown reduction {reduction!r}")


def bce(p, y, eps: float = EPS, reduction: str = "mean"):
    p = torch.as_tensor(p).clamp(eps, 1 - eps)
    y = torch.as_tensor(y, dtype=p.dtype)
    return _reduce(-(y * torch.log(p) + (1 - y) * torch.log1p(-p)), reduction)


def rce(p, y, clamp_log: float = 4.0, eps: float = EPS, reduction: str = "mean"):
    """Reverse cross entropy: labels and predictions swap roles, log(0) := -A."""
    p = torch.as_tensor(p).clamp(eps, 1 - eps)
    y = torch.as_tensor(y, dtype=p.dtype)
    floor = math.exp(-clamp_log)
    log_y1 = torch.log(y.clamp(min=floor))
    log_y0 = torch.log((1 - y).clamp(min=floor))
    return _reduce(-(p * log_y1 + (1 - p) * log_y0), reduction)


def sce(p, y, alpha: float = 0.1, beta: float = 1.0, clamp_log: float = 4.0, reduction: str = "mean"):
    """Symmetric cross entropy ``alpha * CE + beta * RCE``."""
    return alpha * bce(p, y, reduction=reduction) + beta * rce(p, y, clamp_log, reduction=reduction)


def gce(p, y, q: float = 0.7, eps: float = EPS, reduction: str = "mean"):
    """Generalized cross entropy ``(1 - p_y^q) / q``."""
    if not 0 < q <= 1:
        raise ConfigError(f"q must lie in (0, 1], got {q}")
    p = torch.as_tensor(p).clamp(eps, 1 - eps)
    y = torch.as_tensor(y, dtype=p.dtype)
    p_y = y * p + (1 - y) * (1 - p)
    return _reduce((1 - p_y.pow(q)) / q, reduction)


def jol_loss(p, soft, prior: float = 0.5, lambda_p: float = 0.1, lambda_e: float = 0.1,
             eps: float = EPS):
    """Joint-optimization objective on one batch.

    Cross entropy to the current soft labels, plus a KL term pulling the
    batch-mean prediction toward the class prior, plus the mean prediction
    entropy.
    """
    if lambda_p < 0 or lambda_e < 0:
        raise ConfigError("JOL regularizer weights must be nonnegative")
    p = torch.as_tensor(p).clamp(eps, 1 - eps)
    ce = bce(p, soft, eps)
    mean_p = p.mean()
    prior_t = torch.tensor([1 - prior, prior], dtype=p.dtype)
    mean_t = torch.stack([1 - mean_p, mean_p])
    l_p = torch.sum(prior_t * torch.log(prior_t.clamp(min=eps) / mean_t))
    l_e = -torch.mean(p * torch.log(p) + (1 - p) * torch.log1p(-p))
    return ce + lambda_p * l_p + lambda_e * l_e


@dataclass
class LossConfig:
    name: str = "bce"
    sce_alpha: float = 0.1
    sce_beta: float = 1.0
    sce_clamp_log: float = 4.0
    gce_q: float = 0.7
    jol_momentum: float = 0.9
    jol_lambda_p: float = 0.1
    jol_lambda_e: float = 0.1
    jol_warmup_epochs: int = 2

    def __post_init__(self):
        if self.name not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.name!r}")
        if self.jol_lambda_p < 0 or self.jol_lambda_e < 0:
            raise ConfigError("JOL regularizer weights must be nonnegative")
        if not 0 <= self.jol_momentum <= 1:
            raise ConfigError("jol_momentum must lie in [0, 1]")


def loss_fn(cfg: LossConfig) -> Callable:
    """Batch loss ``f(p, target)``; for JOL the target is the soft label."""
    if cfg.name == "bce":
        return lambda p, y: bce(p, y)
    if cfg.name == "sce":
        return lambda p, y: sce(p, y, cfg.sce_alpha, cfg.sce_beta, cfg.sce_clamp_log)
    if cfg.name == "gce":
        return lambda p, y: gce(p, y, cfg.gce_q)
    return lambda p, y, prior=0.5: jol_loss(p, y, prior, cfg.jol_lambda_p, cfg.jol_lambda_e)


def update_soft_labels(soft: torch.Tensor, predictions: torch.Tensor, momentum: float) -> torch.Tensor:
    """Move soft labels toward predictions; momentum 1 replaces them outright."""
    return (1 - momentum) * soft + momentum * predictions


def jol_step(logits, soft, cfg: LossConfig, prior: float = 0.5):
    """One label re-estimation step over the whole training set.

    Returns ``(updated soft labels, loss of the logits against the old labels)``.
    """
    logits = torch.as_tensor(logits)
    soft = torch.as_tensor(soft, dtype=logits.dtype)
    p = torch.sigmoid(logits)
    loss = jol_loss(p, soft, prior, cfg.jol_lambda_p, cfg.jol_lambda_e)
    return update_soft_labels(soft, p.detach(), cfg.jol_momentum), loss
