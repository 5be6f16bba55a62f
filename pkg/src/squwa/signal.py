"""Derivatives, resampling and normalization applied before the network."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from squwa.core import PPGRecord


def _central_diff(x: np.ndarray, fs: float) -> np.ndarray:
    # replicated edges keep the output length equal to the input length
    p = np.pad(x, 1, mode="edge")
    return (p[2:] - p[:-2]) * (fs / 2.0)


def _second_diff(x: np.ndarray, fs: float) -> np.ndarray:
    p = np.pad(x, 1, mode="edge")
    return (p[2:] - 2.0 * p[1:-1] + p[:-2]) * (fs * fs)


def derivatives(r: PPGRecord) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw signal plus first and second time derivatives (per second)."""
    x = np.asarray(r.samples, dtype=np.float64)
    return x, _central_diff(x, r.fs), _second_diff(x, r.fs)


def resample(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    if fs_in == fs_out:
        return x.copy()
    ratio = Fraction(fs_out / fs_in).limit_denominator(1000)
    y = resample_poly(x, ratio.numerator, ratio.denominator, padtype="line")
    n_out = int(round(len(x) * fs_out / fs_in))
    if len(y) >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - len(y)), mode="edge")


def znormalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance copy of ``x``; a flat signal maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    if sd <= 1e-12 * max(1.0, abs(mu)):
        return np.zeros_like(x)
    return (x - mu) / sd


def network_input(r: PPGRecord, normalize_channels: bool = True) -> np.ndarray:
    """Stack (raw, d1, d2) into the 3 x L float32 array the model consumes.

    The raw channel is always z-normalized because the quality model is
    trained on it; derivative channels follow ``normalize_channels``.
    """
    raw, d1, d2 = derivatives(r)
    raw = znormalize(raw)
    if normalize_channels:
        d1, d2 = znormalize(d1), znormalize(d2)
    else:
        # derivatives of the normalized raw channel keep scales comparable
        sd = np.asarray(r.samples, dtype=np.float64).std() or 1.0
        d1, d2 = d1 / sd, d2 / sd
    return np.stack([raw, d1, d2]).astype(np.float32)
