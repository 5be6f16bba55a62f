import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from squwa.attention import SQAttention, attention, context_and_classify, positional_encoding, project
from squwa.errors import ConfigError, ShapeError

from conftest import fd_max_rel_error


def _random(k, T, seed, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return dict(
        h=torch.randn(k, T, generator=g, dtype=dtype),
        sqi=torch.rand(T, generator=g, dtype=dtype),
        w_q=torch.randn(k, k, generator=g, dtype=dtype) / math.sqrt(k),
        w_k=torch.randn(1, k, generator=g, dtype=dtype),
        w_v=torch.randn(k, k, generator=g, dtype=dtype) / math.sqrt(k),
    )


def matmul_oracle(a, b):
    n, m = len(a), len(b[0])
    return np.array([[sum(a[i][r] * b[r][j] for r in range(len(b))) for j in range(m)] for i in range(n)])


def test_positional_encoding_values():
    P = positional_encoding(8, 10)
    assert P.shape == (8, 10)
    assert torch.equal(P[:, 0], torch.tensor([0.0, 1.0] * 4))
    assert abs(P[0, 1].item() - math.sin(1.0)) < 1e-7
    assert abs(P[2, 3].item() - math.sin(3 / 10000 ** (2 / 8))) < 1e-6
    assert abs(P[3, 3].item() - math.cos(3 / 10000 ** (2 / 8))) < 1e-6
    big = positional_encoding(64, 75)
    assert torch.all(big.abs() <= 1)
    with pytest.raises(ValueError):
        positional_encoding(5, 10)


def test_identity_query_projection():
    k, T = 4, 6
    r = _random(k, T, 0)
    q, _, _ = project(r["h"], r["sqi"], torch.eye(k, dtype=torch.float64), r["w_k"], r["w_v"],
                      torch.zeros(k, T, dtype=torch.float64))
    assert torch.equal(q, r["h"].T)


def test_zero_sqi_gives_uniform_attention():
    k, T = 4, 7
    r = _random(k, T, 1)
    q, key, _ = project(r["h"], torch.zeros(T, dtype=torch.float64), r["w_q"], r["w_k"], r["w_v"],
                        positional_encoding(k, T, torch.float64))
    assert torch.all(key == 0)
    assert torch.allclose(attention(q, key), torch.full((T, T), 1 / T, dtype=torch.float64))


@pytest.mark.parametrize("seed", range(3))
def test_projection_matches_matmul_oracle(seed):
    k, T = 4, 3
    r = _random(k, T, seed)
    P = positional_encoding(k, T, torch.float64)
    q, key, v = project(r["h"], r["sqi"], r["w_q"], r["w_k"], r["w_v"], P)
    h_adj_t = (r["h"] + P).T.tolist()
    assert np.abs(q.numpy() - matmul_oracle(h_adj_t, r["w_q"].tolist())).max() < 1e-6
    assert np.abs(v.numpy() - matmul_oracle(h_adj_t, r["w_v"].tolist())).max() < 1e-6
    sqi_col = [[s] for s in r["sqi"].tolist()]
    assert np.abs(key.numpy() - matmul_oracle(sqi_col, r["w_k"].tolist())).max() < 1e-6
    assert key.shape == (T, k) and torch.linalg.matrix_rank(key) <= 1


def test_scores_and_softmax_match_oracle():
    k, T = 4, 5
    r = _random(k, T, 3)
    q, key, _ = project(r["h"], r["sqi"], r["w_q"], r["w_k"], r["w_v"], positional_encoding(k, T, torch.float64))
    s = matmul_oracle(q.tolist(), key.T.tolist()) / math.sqrt(k)
    e = np.exp(s)
    expected = e / e.sum(axis=1, keepdims=True)
    assert np.abs(attention(q, key).numpy() - expected).max() < 1e-6


def test_equal_scores_are_uniform():
    q = torch.ones(6, 4)
    key = torch.ones(6, 4)
    assert torch.allclose(attention(q, key), torch.full((6, 6), 1 / 6))


def test_two_step_hand_case():
    # q . key / sqrt(k) with k = 1 is just the product, so the row is [0, ln 3]
    q = torch.tensor([[1.0], [1.0]], dtype=torch.float64)
    key = torch.tensor([[0.0], [math.log(3.0)]], dtype=torch.float64)
    w = attention(q, key)
    assert torch.allclose(w, torch.tensor([[0.25, 0.75], [0.25, 0.75]], dtype=torch.float64), atol=1e-12)


def test_large_scores_stay_finite():
    q = torch.full((3, 2), 1e4)
    key = torch.tensor([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    w = attention(q, key)
    assert torch.isfinite(w).all() and torch.allclose(w.sum(-1), torch.ones(3))


@given(st.integers(4, 32).map(lambda x: 2 * (x // 2)), st.integers(2, 40), st.integers(0, 10**6))
def test_rows_are_stochastic(k, T, seed):
    r = _random(k, T, seed, torch.float32)
    q, key, _ = project(r["h"] * 5, r["sqi"], r["w_q"], r["w_k"] * 5, r["w_v"], positional_encoding(k, T))
    w = attention(q, key)
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(-1), torch.ones(T), atol=1e-6)


@given(st.integers(2, 16).map(lambda x: 2 * x), st.integers(2, 40), st.floats(0, 1), st.integers(0, 10**6))
def test_constant_sqi_gives_identical_rows(k, T, value, seed):
    r = _random(k, T, seed, torch.float32)
    q, key, _ = project(r["h"], torch.full((T,), value), r["w_q"], r["w_k"], r["w_v"], positional_encoding(k, T))
    w = attention(q, key)
    assert torch.allclose(w, w[:1].expand_as(w), atol=1e-6)


@given(st.integers(0, 10**6), st.integers(0, 9), st.floats(0.01, 1.0))
def test_raising_sqi_shifts_mass_toward_that_column(seed, t, bump):
    k, T = 6, 10
    g = torch.Generator().manual_seed(seed)
    w_k = torch.rand(1, k, generator=g, dtype=torch.float64) + 0.1
    q = torch.randn(T, k, generator=g, dtype=torch.float64)
    # shift every query so its alignment with the key direction is positive
    align = q @ w_k.T
    q = q + (torch.relu(-align) + 0.1) * w_k / (w_k @ w_k.T)
    assert torch.all(q @ w_k.T > 0)
    sqi = torch.rand(T, generator=g, dtype=torch.float64)
    sqi2 = sqi.clone()
    sqi2[t] += bump
    before = attention(q, sqi[:, None] @ w_k).sum(0)[t]
    after = attention(q, sqi2[:, None] @ w_k).sum(0)[t]
    assert after > before


def test_identity_attention_pools_column_mean():
    v = torch.randn(5, 3)
    head = torch.nn.Linear(3, 1)
    out = context_and_classify(torch.eye(5), v, head)
    assert torch.allclose(out.context, v.mean(0), atol=1e-6)


def test_constant_values_give_that_context():
    vrow = torch.randn(3)
    v = vrow.expand(6, 3)
    w = torch.softmax(torch.randn(6, 6), -1)
    out = context_and_classify(w, v, torch.nn.Linear(3, 1))
    assert torch.allclose(out.context, vrow, atol=1e-6)


def test_context_and_head_match_oracle():
    g = torch.Generator().manual_seed(4)
    w = torch.softmax(torch.randn(5, 5, generator=g, dtype=torch.float64), -1)
    v = torch.randn(5, 4, generator=g, dtype=torch.float64)
    head = torch.nn.Linear(4, 1).double()
    out = context_and_classify(w, v, head)
    rows = matmul_oracle(w.tolist(), v.tolist())
    ctx = rows.mean(axis=0)
    logit = float(ctx @ head.weight.detach().numpy()[0] + head.bias.item())
    assert np.abs(out.context.detach().numpy() - ctx).max() < 1e-6
    assert abs(out.logit.item() - logit) < 1e-6
    last = context_and_classify(w, v, head, pooling="last")
    assert np.abs(last.context.detach().numpy() - rows[-1]).max() < 1e-6
    with pytest.raises(ConfigError):
        context_and_classify(w, v, head, pooling="max")


def test_shape_errors():
    r = _random(4, 5, 0)
    with pytest.raises(ShapeError):
        project(r["h"], torch.rand(6, dtype=torch.float64), r["w_q"], r["w_k"], r["w_v"],
                positional_encoding(4, 5, torch.float64))
    with pytest.raises(ShapeError):
        project(r["h"], r["sqi"], r["w_q"], torch.randn(2, 4, dtype=torch.float64), r["w_v"],
                positional_encoding(4, 5, torch.float64))
    with pytest.raises(ShapeError):
        attention(torch.randn(5, 4), torch.randn(5, 3))
    with pytest.raises(ShapeError):
        context_and_classify(torch.eye(5), torch.randn(4, 3), torch.nn.Linear(3, 1))


def test_module_shapes_and_fixed_encoding():
    m = SQAttention(64, 75)
    logit, w, ctx = m(torch.randn(2, 64, 75), torch.rand(2, 75))
    assert logit.shape == (2,) and w.shape == (2, 75, 75) and ctx.shape == (2, 64)
    assert "P" not in dict(m.named_parameters()) and "P" in dict(m.named_buffers())
    assert m.w_k.shape == (1, 64)


def test_full_path_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for seed in range(5):
        torch.manual_seed(seed)
        m = SQAttention(4, 5).double()
        h = torch.randn(2, 4, 5, dtype=torch.float64, requires_grad=True)
        sqi = torch.rand(2, 5, dtype=torch.float64, requires_grad=True)
        err = fd_max_rel_error(lambda: torch.sigmoid(m(h, sqi)[0]).sum(), [h, sqi, *m.parameters()], rng)
        assert err < 1e-4
