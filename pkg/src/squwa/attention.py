"""Quality-keyed attention over LSTM hidden states.

Queries and values come from the hidden states plus a fixed sinusoidal
positional encoding; keys come from the scalar SQI series through a 1 x k
matrix, so K = SQI^T W_K is a rank-1 T x k matrix and the score matrix
Q K^T / sqrt(k) is T x T.  Row t of the attention matrix is therefore
softmax_s(a_t * SQI[s]) with a_t = Q[t] . W_K / sqrt(k): a positive a_t
shifts the row's mass toward high-quality timesteps.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn

from squwa.errors import ConfigError, NumericalError, ShapeError

POOLING = ("mean", "last")


def positional_encoding(k: int, T: int, dtype=torch.float32) -> torch.Tensor:
    """(k, T) sinusoidal table: P[2i, t] = sin(t / 10000^(2i/k)), P[2i+1, t] = cos(...)."""
    if k % 2:
        raise ValueError(f"positional encoding needs an even size, got k={k}")
    t = torch.arange(T, dtype=torch.float64)
    freq = torch.pow(10000.0, -torch.arange(0, k, 2, dtype=torch.float64) / k)
    angles = freq[:, None] * t[None, :]
    P = torch.empty(k, T, dtype=torch.float64)
    P[0::2] = torch.sin(angles)
    P[1::2] = torch.cos(angles)
    return P.to(dtype)


def project(h: torch.Tensor, sqi: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
            w_v: torch.Tensor, P: torch.Tensor):
    """Hidden states (..., k, T) and SQI (..., T) -> Q, K, V each (..., T, k)."""
    k, T = h.shape[-2:]
    if sqi.shape[-1] != T or P.shape != (k, T) or w_q.shape != (k, k) or w_v.shape != (k, k) \
            or w_k.shape != (1, k):
        raise ShapeError(f"incompatible shapes: H {tuple(h.shape)}, SQI {tuple(sqi.shape)}, "
                         f"P {tuple(P.shape)}, W_K {tuple(w_k.shape)}")
    h_adj_t = (h + P).transpose(-1, -2)
    q = h_adj_t @ w_q
    key = sqi.unsqueeze(-1) @ w_k
    v = h_adj_t @ w_v
    return q, key, v


def attention(q: torch.Tensor, key: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax of Q K^T / sqrt(k): (..., T, T)."""
    if q.shape[-1] != key.shape[-1]:
        raise ShapeError(f"Q {tuple(q.shape)} and K {tuple(key.shape)} disagree on k")
    scores = q @ key.transpose(-1, -2) / math.sqrt(q.shape[-1])
    scores = scores - scores.amax(dim=-1, keepdim=True)
    e = torch.exp(scores)
    w = e / e.sum(dim=-1, keepdim=True)
    if not torch.isfinite(w).all():
        raise NumericalError("non-finite attention weights")
    return w


class HeadOutput(NamedTuple):
    logit: torch.Tensor  # (B,)
    context: torch.Tensor  # (B, k)
    row_context: torch.Tensor  # (B, T, k)


def context_and_classify(w_atten: torch.Tensor, v: torch.Tensor, head: nn.Linear,
                         pooling: str = "mean") -> HeadOutput:
    if w_atten.shape[-1] != v.shape[-2]:
        raise ShapeError(f"W_atten {tuple(w_atten.shape)} vs V {tuple(v.shape)}")
    rows = w_atten @ v
    if pooling == "mean":
        ctx = rows.mean(dim=-2)
    elif pooling == "last":
        ctx = rows[..., -1, :]
    else:
        raise ConfigError(f"pooling must be one of {POOLING}")
    return HeadOutput(head(ctx).squeeze(-1), ctx, rows)


class SQAttention(nn.Module):
    def __init__(self, k: int = 64, T: int = 75, pooling: str = "mean"):
        super().__init__()
        if pooling not in POOLING:
            raise ConfigError(f"pooling must be one of {POOLING}")
        self.k, self.T, self.pooling = k, T, pooling
        self.w_q = nn.Parameter(torch.empty(k, k))
        self.w_k = nn.Parameter(torch.empty(1, k))
        self.w_v = nn.Parameter(torch.empty(k, k))
        nn.init.xavier_uniform_(self.w_q)
        nn.init.xavier_uniform_(self.w_v)
        nn.init.uniform_(self.w_k, -1.0, 1.0)
        self.register_buffer("P", positional_encoding(k, T))
        self.head = nn.Linear(k, 1)

    def forward(self, h: torch.Tensor, sqi: torch.Tensor):
        """Returns (logit (B,), attention weights (B, T, T), pooled context (B, k))."""
        q, key, v = project(h, sqi, self.w_q, self.w_k, self.w_v, self.P.to(h.dtype))
        w = attention(q, key)
        out = context_and_classify(w, v, self.head, self.pooling)
        return out.logit, w, out.context
