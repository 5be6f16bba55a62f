"""Training loop: Adam with exponential learning-rate decay and early stopping.

The quality branch is frozen, so its SQI series is computed once per record
before training and reused every epoch.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from squwa.checkpoint import load_checkpoint, save_checkpoint  # noqa: F401  (re-exported)
from squwa.core import PPGRecord
from squwa.errors import ConfigError, DivergenceError
from squwa.evaluate import metrics
from squwa.losses import LossConfig, bce, loss_fn, update_soft_labels
from squwa.signal import network_input
from squwa.variants import SQUWAModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    lr_decay: float = 0.97
    patience: int = 10
    max_epochs: int = 30
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size and max_epochs must be positive")


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)


class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; return True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class Batch:
    x: torch.Tensor  # (N, 3, L)
    sqi: torch.Tensor  # (N, T)
    y: torch.Tensor  # (N,)
    ids: list

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        return Batch(self.x[idx], self.sqi[idx], self.y[idx], [self.ids[i] for i in idx.tolist()])


@torch.no_grad()
def prepare(model: SQUWAModel, records: Sequence[PPGRecord], chunk: int = 256) -> Batch:
    """Stack network inputs and precompute the frozen quality branch's SQIs."""
    x = torch.from_numpy(np.stack([network_input(r, model.mc.normalize_channels) for r in records])) \
        if records else torch.zeros(0, 3, model.mc.length)
    sqi = [model.quality_index(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    sqi = torch.cat(sqi) if sqi else torch.zeros(0, model.mc.T)
    y = torch.tensor([float(r.label) for r in records])
    return Batch(x, sqi, y, [r.record_id for r in records])


@torch.no_grad()
def predict(model: SQUWAModel, data: Batch, chunk: int = 256) -> np.ndarray:
    """AF probabilities for every record in ``data`` (eval mode)."""
    was_training = model.training
    model.eval()
    out = [torch.sigmoid(model(data.x[i:i + chunk], data.sqi[i:i + chunk]).logit)
           for i in range(0, len(data), chunk)]
    model.train(was_training)
    return torch.cat(out).numpy() if out else np.zeros(0)


def train_step(model: SQUWAModel, optimizer, x, sqi, target, loss) -> tuple[float, torch.Tensor]:
    """One optimizer update; returns the batch loss and the detached probabilities."""
    p = torch.sigmoid(model(x, sqi).logit)
    value = loss(p, target)
    if not torch.isfinite(value.detach()):
        raise DivergenceError(f"non-finite training loss {value.detach().item()}")
    optimizer.zero_grad()
    value.backward()
    optimizer.step()
    return float(value.detach()), p.detach()


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    soft_labels: Optional[dict] = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def train(model: SQUWAModel, train_records: Sequence[PPGRecord], val_records: Sequence[PPGRecord],
          tc: Optional[TrainConfig] = None) -> TrainResult:
    """Fit ``model`` in place and leave it holding the best-validation-loss weights."""
    tc = tc or TrainConfig()
    seed_everything(tc.seed)
    train_data = prepare(model, train_records)
    val_data = prepare(model, val_records)
    params = model.trainable_parameters()
    optimizer = torch.optim.Adam(params, lr=tc.lr)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=tc.lr_decay)
    lc = tc.loss
    base_loss = loss_fn(lc)
    soft = train_data.y.clone()
    prior = float(train_data.y.mean()) if len(train_data) else 0.5
    gen = torch.Generator().manual_seed(tc.seed)
    stopper = EarlyStopping(tc.patience)
    best_state = copy.deepcopy(model.state_dict())
    history = []
    for epoch in range(1, tc.max_epochs + 1):
        model.train()
        order = torch.randperm(len(train_data), generator=gen)
        seen_p = torch.zeros(len(train_data))
        total = 0.0
        for i in range(0, len(order), tc.batch_size):
            idx = order[i:i + tc.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs more than one record
            b = train_data.subset(idx)
            if lc.name == "jol":
                target = soft[idx]
                loss = lambda p, y: base_loss(p, y, prior)  # noqa: E731
            else:
                target, loss = b.y, base_loss
            value, p = train_step(model, optimizer, b.x, b.sqi, target, loss)
            seen_p[idx] = p
            total += value * len(idx)
        scheduler.step()
        if lc.name == "jol" and epoch >= lc.jol_warmup_epochs:
            soft = update_soft_labels(soft, seen_p, lc.jol_momentum)
        row = {"epoch": epoch, "lr": optimizer.param_groups[0]["lr"],
               "train_loss": total / max(1, len(order))}
        if len(val_data):
            probs = predict(model, val_data)
            row["val_loss"] = float(bce(torch.from_numpy(probs).double(), val_data.y.double()))
            try:
                row.update({f"val_{k}": v for k, v in metrics(probs, val_data.y.numpy()).items()})
            except ValueError:
                pass
        else:
            row["val_loss"] = row["train_loss"]
        if not math.isfinite(row["val_loss"]):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss")
        history.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in row.items() if isinstance(v, float)})
        stop = stopper.step(epoch, row["val_loss"])
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    soft_map = dict(zip(train_data.ids, soft.tolist())) if lc.name == "jol" else None
    return TrainResult(history, stopper.best_epoch, stopper.best, soft_map)
