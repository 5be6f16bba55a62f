"""Domain types and shape conventions.

Records are 30 s windows sampled at 80 Hz (L = 2400).  Both CNN branches
downsample by the same factor D = 32, so feature, SQI and hidden-state
sequences all have T = L / D = 75 timesteps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from squwa.errors import MaskError, ShapeError

FS = 80.0
WINDOW_S = 30.0
L = 2400
DOWNSAMPLE = 32
T = L // DOWNSAMPLE
HIDDEN = 64

AF = 1
NON_AF = 0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PPGRecord:
    samples: np.ndarray
    fs: float = FS
    label: int = NON_AF
    quality_mask: Optional[np.ndarray] = None
    record_id: str = ""
    patient_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(np.asarray(self.samples, dtype=np.float32)))
        if self.quality_mask is not None:
            object.__setattr__(self, "quality_mask", _frozen(np.asarray(self.quality_mask, dtype=np.uint8)))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    @property
    def corruption_fraction(self) -> float:
        if self.quality_mask is None:
            return 0.0
        return float(self.quality_mask.mean())

    def replace(self, **changes) -> "PPGRecord":
        kw = dict(samples=self.samples, fs=self.fs, label=self.label,
                  quality_mask=self.quality_mask, record_id=self.record_id,
                  patient_id=self.patient_id)
        kw.update(changes)
        return PPGRecord(**kw)


def validate_record(r: PPGRecord, length: int = L) -> PPGRecord:
    """Return ``r`` unchanged if it satisfies every record invariant."""
    if r.samples.ndim != 1 or r.samples.shape[0] != length:
        raise ShapeError(f"record {r.record_id!r}: expected {length} samples, got {r.samples.shape}")
    if not np.all(np.isfinite(r.samples)):
        raise ValueError(f"record {r.record_id!r}: non-finite samples")
    if not r.fs > 0:
        raise ValueError(f"record {r.record_id!r}: fs must be positive")
    if r.label not in (AF, NON_AF):
        raise ValueError(f"record {r.record_id!r}: label must be 0 or 1")
    if r.quality_mask is not None:
        if r.quality_mask.shape != r.samples.shape:
            raise MaskError(f"record {r.record_id!r}: mask shape {r.quality_mask.shape} != {r.samples.shape}")
        if np.any(r.quality_mask > 1):
            raise MaskError(f"record {r.record_id!r}: mask values must be 0/1")
    return r


def downsample_mask(mask: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    """Majority-vote a per-sample mask onto the T-step feature grid."""
    mask = np.asarray(mask, dtype=np.float64)
    n = len(mask) // factor
    return (mask[: n * factor].reshape(n, factor).mean(axis=1) >= 0.5).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    values: np.ndarray  # n x T

    def __post_init__(self):
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise ShapeError("feature sequence must be a finite n x T matrix")


@dataclass(frozen=True, eq=False)
class SQISeries:
    values: np.ndarray  # T

    def __post_init__(self):
        v = self.values
        if v.ndim != 1:
            raise ShapeError("SQI series must be one-dimensional")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("SQI values must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class HiddenStates:
    values: np.ndarray  # k x T

    def __post_init__(self):
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise ShapeError("hidden states must be a finite k x T matrix")


@dataclass(frozen=True, eq=False)
class AttentionArtifacts:
    weights: np.ndarray  # T x T, row-stochastic
    context: np.ndarray  # k
    logit: float
    probability: float
    row_context: Optional[np.ndarray] = field(default=None)  # T x k

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError("attention weights must be square")
        if np.any(w < 0) or not np.allclose(w.sum(axis=1), 1.0, atol=1e-5):
            raise ValueError("attention rows must be nonnegative and sum to 1")
        if not np.isfinite(self.logit):
            raise ValueError("logit must be finite")
        # float32 sigmoid saturates to exactly 0/1 only for |logit| > ~17
        if abs(self.probability - 1.0 / (1.0 + np.exp(-self.logit))) > 1e-5:
            raise ValueError("probability must equal sigmoid(logit)")

    @property
    def column_mass(self) -> np.ndarray:
        return self.weights.sum(axis=0)
