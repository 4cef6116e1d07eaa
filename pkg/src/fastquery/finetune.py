"""Data-free fine-tuning of a quantized embedding table.

Minimizes the frequency-weighted discrepancy between the projected
quantized table and the projected original,

    L(W_cont) = || I (Q(W_cont) W_qkv - W W_qkv) ||_F^2,

by plain gradient descent on a continuous proxy ``W_cont`` with a
straight-through estimator for Q. Matrices are token-major: W is (m x n),
W_qkv is (n x cols), I is the diagonal of clipped token frequencies.
Per-channel bit-widths and scales are frozen at the initial quantization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .quantizer import QuantConfig, QuantizedTable, quantize_table, quantize_values

log = logging.getLogger(__name__)


class FinetuneDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class FinetuneConfig:
    learning_rate: float = 1e-3
    iterations: int = 500
    freq_threshold: float | None = None  # None: 10 x median frequency
    seed: int = 0
    quant: QuantConfig = field(default_factory=QuantConfig)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.freq_threshold is not None and self.freq_threshold <= 0:
            raise ValueError("freq_threshold must be positive")


@dataclass(frozen=True)
class TokenFrequency:
    freqs: np.ndarray
    diag: np.ndarray  # min(freqs, tau)
    threshold: float


def build_freq_matrix(freqs, threshold: float = np.inf) -> TokenFrequency:
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("frequencies must be finite and non-negative")
    return TokenFrequency(f, np.minimum(f, threshold), float(threshold))


@dataclass(frozen=True)
class ChannelQuantizer:
    """Fixed per-channel quantizer over columns of a token-major matrix."""

    bits: np.ndarray
    scales: np.ndarray

    def __call__(self, W_cont: np.ndarray) -> np.ndarray:
        q = quantize_values(W_cont.T, self.bits, self.scales)
        return (q * self.scales[:, None]).T

    def in_range(self, W_cont: np.ndarray) -> np.ndarray:
        half = (1 << (self.bits - 1)).astype(np.float64)
        lo, hi = -half * self.scales, (half - 1) * self.scales
        return (W_cont >= lo[None, :]) & (W_cont <= hi[None, :])

    def permuted(self, perm) -> "ChannelQuantizer":
        return ChannelQuantizer(self.bits[perm], self.scales[perm])


def _check_shapes(W_cont, W, W_qkv, diag) -> None:
    m, n = W.shape
    if W_cont.shape != (m, n):
        raise ValueError(f"W_cont shape {W_cont.shape} != W shape {W.shape}")
    if W_qkv.ndim != 2 or W_qkv.shape[0] != n:
        raise ValueError(f"W_qkv must have {n} rows, got shape {W_qkv.shape}")
    if diag.shape != (m,):
        raise ValueError(f"frequency diagonal needs {m} entries, got {diag.shape}")


def _canonical_order(*mats: np.ndarray) -> np.ndarray:
    """A channel order that depends only on the channels' contents.

    Contracting over channels in this order makes the loss bitwise
    invariant to any joint permutation of channels and W_qkv rows.
    """
    keys = np.concatenate([np.atleast_2d(m) for m in mats], axis=0)
    return np.lexsort(keys[::-1])


def _diag_of(I) -> np.ndarray:
    return I.diag if isinstance(I, TokenFrequency) else np.asarray(I, dtype=np.float64)


def _residual(W_cont, W, W_qkv, diag, quant):
    deq = W_cont if quant is None else quant(W_cont)
    delta = deq - W
    order = _canonical_order(W, W_cont, W_qkv.T)
    return diag[:, None] * (delta[:, order] @ W_qkv[order]), order


def loss(W_cont, W, W_qkv, I, quant: ChannelQuantizer | None = None) -> float:
    """Squared Frobenius norm of I (Q(W_cont) W_qkv - W W_qkv).

    ``quant=None`` replaces Q by the identity (the smooth surrogate).
    """
    W_cont, W, W_qkv = (np.asarray(x, dtype=np.float64) for x in (W_cont, W, W_qkv))
    diag = _diag_of(I)
    _check_shapes(W_cont, W, W_qkv, diag)
    r, _ = _residual(W_cont, W, W_qkv, diag, quant)
    return float(np.sum(r * r))


def grad_ste(W_cont, W, W_qkv, I, quant: ChannelQuantizer | None = None) -> np.ndarray:
    """2 * mask * (I^T I (Q(W_cont) W_qkv - W W_qkv) W_qkv^T), STE through Q."""
    W_cont, W, W_qkv = (np.asarray(x, dtype=np.float64) for x in (W_cont, W, W_qkv))
    diag = _diag_of(I)
    _check_shapes(W_cont, W, W_qkv, diag)
    r, _ = _residual(W_cont, W, W_qkv, diag, quant)
    g = 2.0 * (diag[:, None] * r) @ W_qkv.T
    if quant is not None:
        g = g * quant.in_range(W_cont)
    return g


@dataclass
class FinetuneResult:
    table: QuantizedTable
    loss_history: list[float]
    best_iteration: int

    @property
    def best_loss(self) -> float:
        return self.loss_history[self.best_iteration]

    def __iter__(self):
        return iter((self.table, self.loss_history))


def finetune(W, W_qkv, freqs, config: FinetuneConfig = FinetuneConfig()) -> FinetuneResult:
    """Gradient descent on the quantized table; no task data involved.

    Clipped token weights are divided by the threshold, so they lie in
    [0, 1] whatever the unit of ``freqs``; this rescales the loss but not its
    minimizers, and keeps the default step size meaningful. Returns the
    table at the best loss seen.
    """
    W = np.asarray(W, dtype=np.float64)
    W_qkv = np.asarray(W_qkv, dtype=np.float64)
    f = np.asarray(freqs, dtype=np.float64)
    med = float(np.median(f))
    tau = 10.0 * med if config.freq_threshold is None else config.freq_threshold
    freq = build_freq_matrix(f, tau)
    top = float(freq.diag.max())
    diag = freq.diag / top if top > 0 else freq.diag

    init = quantize_table(W.T, config.quant)
    inv = np.argsort(init.permutation)
    quant = ChannelQuantizer(init.channel_bits[inv], init.scales[inv])

    W_cont = W.copy()
    l0 = loss(W_cont, W, W_qkv, diag, quant)
    history = [l0]
    best, best_it, best_W = l0, 0, W_cont.copy()
    for it in range(1, config.iterations + 1):
        W_cont -= config.learning_rate * grad_ste(W_cont, W, W_qkv, diag, quant)
        cur = loss(W_cont, W, W_qkv, diag, quant)
        history.append(cur)
        if l0 > 0 and cur > 10 * l0:
            raise FinetuneDivergedError(
                f"loss {cur:.4g} at iteration {it} exceeds 10x initial {l0:.4g}; lower the learning rate"
            )
        if cur < best:
            best, best_it, best_W = cur, it, W_cont.copy()
    log.debug("finetune: L0=%.6g best=%.6g at %d", l0, best, best_it)

    values = quantize_values(best_W.T[init.permutation], init.channel_bits, init.scales)
    table = QuantizedTable(values, init.channel_bits, init.scales, init.permutation, init.bit_combo)
    return FinetuneResult(table, history, best_it)
