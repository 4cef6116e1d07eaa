import inspect

import numpy as np
import pytest

from fastquery import finetune as ft
from fastquery.quantizer import quantize_table
from fastquery.synthetic import lognormal_channel_table, qkv_matrix, zipf_freqs
from oracles import proj_loss


def small_instance(m, n, cols, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, n)), rng.standard_normal((n, cols)), rng.random(m) + 0.1


def test_build_freq_matrix(golden):
    assert ft.build_freq_matrix([5, 1, 3], 2).diag.tolist() == [2, 1, 2]
    assert ft.build_freq_matrix([5, 1, 3]).diag.tolist() == [5, 1, 3]
    with pytest.raises(ValueError):
        ft.build_freq_matrix([1, -1])
    freqs = zipf_freqs(20, 1.0, seed=0)
    assert freqs.tolist() == golden["zipf_freqs"]
    assert ft.build_freq_matrix(freqs, 10 * float(np.median(freqs))).diag.tolist() == golden["zipf_clipped"]


def test_config_validation():
    for kw in (dict(learning_rate=0), dict(iterations=-1), dict(freq_threshold=0)):
        with pytest.raises(ValueError):
            ft.FinetuneConfig(**kw)


def test_loss_vs_triple_loop():
    W, Q, d = small_instance(4, 3, 2, 0)
    Wc = W + np.random.default_rng(1).standard_normal(W.shape) * 0.1
    quant = ft.ChannelQuantizer(np.array([4, 3, 3]), np.array([0.25, 0.5, 0.5]))
    ref = proj_loss(quant(Wc).tolist(), W.tolist(), Q.tolist(), d.tolist())
    assert ft.loss(Wc, W, Q, d, quant) == pytest.approx(ref, rel=1e-12)
    ref_id = proj_loss(Wc.tolist(), W.tolist(), Q.tolist(), d.tolist())
    assert ft.loss(Wc, W, Q, d) == pytest.approx(ref_id, rel=1e-12)


def test_zero_loss_cases():
    scales = np.array([0.5, 0.25, 1.0])
    quant = ft.ChannelQuantizer(np.array([4, 3, 3]), scales)
    ints = np.random.default_rng(2).integers(-4, 4, (5, 3))
    W = ints * scales
    Q = qkv_matrix(3, 2, 0)
    d = np.ones(5)
    assert ft.loss(W, W, Q, d, quant) == 0.0
    assert not ft.grad_ste(W, W, Q, d, quant).any()
    Wc = W + 0.3
    assert ft.loss(Wc, W, Q, np.zeros(5), quant) == 0.0


def test_shape_errors():
    W, Q, d = small_instance(4, 3, 2, 0)
    with pytest.raises(ValueError):
        ft.loss(W[:3], W, Q, d)
    with pytest.raises(ValueError):
        ft.loss(W, W, Q[:2], d)
    with pytest.raises(ValueError):
        ft.grad_ste(W, W, Q, d[:3])


def test_ste_mask_zeroes_clamped_entries():
    W, Q, d = small_instance(6, 3, 2, 3)
    quant = ft.ChannelQuantizer(np.array([3, 3, 3]), np.array([0.25, 0.25, 0.25]))
    Wc = W.copy()
    Wc[0, 0] = 50.0
    Wc[1, 2] = -50.0
    g = ft.grad_ste(Wc, W, Q, d, quant)
    assert g[0, 0] == 0 and g[1, 2] == 0
    assert np.count_nonzero(g) > 0


def test_surrogate_gradient_finite_differences():
    W, Q, d = small_instance(16, 8, 4, 4)
    Wc = W + np.random.default_rng(5).standard_normal(W.shape) * 0.2
    g = ft.grad_ste(Wc, W, Q, d)
    h = 1e-5
    num = np.empty_like(g)
    for idx in np.ndindex(*Wc.shape):
        plus, minus = Wc.copy(), Wc.copy()
        plus[idx] += h
        minus[idx] -= h
        num[idx] = (ft.loss(plus, W, Q, d) - ft.loss(minus, W, Q, d)) / (2 * h)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) <= 1e-5


def test_surrogate_descent_monotone():
    W, Q, d = small_instance(12, 6, 3, 6)
    Wc = W + 0.5
    lipschitz = 2 * d.max() ** 2 * np.linalg.norm(Q, 2) ** 2
    lr = 0.5 / lipschitz
    prev = ft.loss(Wc, W, Q, d)
    for _ in range(100):
        Wc = Wc - lr * ft.grad_ste(Wc, W, Q, d)
        cur = ft.loss(Wc, W, Q, d)
        assert cur <= prev
        prev = cur


def test_permutation_invariance_exact():
    W = lognormal_channel_table(64, 30, seed=7)
    Q = qkv_matrix(30, 8, seed=8)
    d = zipf_freqs(64, seed=9).astype(float)
    rng = np.random.default_rng(10)
    Wc = W + rng.standard_normal(W.shape) * 0.01
    quant = ft.ChannelQuantizer(rng.choice([3, 4], 30), 2.0 ** rng.integers(-8, -4, 30))
    base = ft.loss(Wc, W, Q, d, quant)
    for _ in range(10):
        pi = rng.permutation(30)
        assert ft.loss(Wc[:, pi], W[:, pi], Q[pi], d, quant.permuted(pi)) == base
        assert ft.loss(Wc[:, pi], W[:, pi], Q[pi], d) == ft.loss(Wc, W, Q, d)


def test_zero_iterations():
    W = lognormal_channel_table(30, 9, seed=1)
    res = ft.finetune(W, qkv_matrix(9, 4, 2), zipf_freqs(30, seed=3), ft.FinetuneConfig(iterations=0))
    init = quantize_table(W.T)
    assert np.array_equal(res.table.values, init.values)
    assert len(res.loss_history) == 1 and res.best_iteration == 0
    table, history = res
    assert table is res.table and history == res.loss_history


def test_best_observed_and_determinism():
    W = lognormal_channel_table(64, 12, seed=2)
    Q, f = qkv_matrix(12, 6, 3), zipf_freqs(64, seed=4)
    cfg = ft.FinetuneConfig(iterations=60)
    a = ft.finetune(W, Q, f, cfg)
    b = ft.finetune(W, Q, f, cfg)
    assert a.loss_history == b.loss_history
    assert a.best_loss <= a.loss_history[0]
    assert a.best_loss == min(a.loss_history)


def test_clipping_changes_solution():
    rng = np.random.default_rng(1)
    W = rng.standard_normal((2, 6)) * 0.3
    Q = rng.standard_normal((6, 4)) / np.sqrt(6)
    f = np.array([1000.0, 1.0])
    clipped = ft.finetune(W, Q, f, ft.FinetuneConfig(learning_rate=0.01, iterations=100, freq_threshold=1.0))
    raw = ft.finetune(W, Q, f, ft.FinetuneConfig(learning_rate=0.01, iterations=100, freq_threshold=1e9))
    assert not np.array_equal(clipped.table.values, raw.table.values)


def test_divergence_guard():
    W = lognormal_channel_table(32, 6, seed=1)
    with pytest.raises(ft.FinetuneDivergedError):
        ft.finetune(W, qkv_matrix(6, 4, 1), zipf_freqs(32, seed=1), ft.FinetuneConfig(learning_rate=50.0, iterations=50))


def test_data_free_signature():
    params = list(inspect.signature(ft.finetune).parameters)
    assert params == ["W", "W_qkv", "freqs", "config"]
