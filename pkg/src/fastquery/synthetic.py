"""Synthetic stand-ins for LLM embedding tables and token statistics."""

from __future__ import annotations

import numpy as np

from .quantizer import QuantizedTable, assign_bitwidths, build_permutation


def lognormal_channel_table(m: int, n: int, seed: int = 0, sigma: float = 0.7) -> np.ndarray:
    """Token-major (m x n) Gaussian table whose channel scales are log-normal.

    Mimics the strong per-channel magnitude spread of real embedding tables.
    """
    if m < 1 or n < 1:
        raise ValueError(f"invalid dims m={m}, n={n}")
    rng = np.random.default_rng(seed)
    channel_scale = rng.lognormal(mean=-3.0, sigma=sigma, size=n)
    return rng.standard_normal((m, n)) * channel_scale[None, :]


def zipf_freqs(m: int, exponent: float = 1.0, seed: int = 0, total: int | None = None) -> np.ndarray:
    """Token counts drawn from a Zipf law, sorted so token 0 is most frequent."""
    if m < 1:
        raise ValueError("m must be positive")
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, m + 1, dtype=np.float64)
    probs = ranks**-exponent
    probs /= probs.sum()
    total = 100 * m if total is None else total
    counts = rng.multinomial(total, probs)
    return np.sort(counts)[::-1].astype(np.int64)


def qkv_matrix(n: int, cols: int, seed: int = 0) -> np.ndarray:
    """Projection weights (n x cols) with the usual 1/sqrt(n) init scale."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, cols)) / np.sqrt(n)


def channel_sensitivities(W, seed: int = 0) -> dict[str, np.ndarray]:
    """Synthetic gradient matrix and Hessian-diagonal summary for a channel-major W.

    Gradients are W-independent noise with a per-channel sensitivity, and the
    Hessian summary is the matching Fisher-style mean squared gradient.
    """
    W = np.asarray(W, dtype=np.float64)
    # own stream: a plain default_rng(seed) would replay the table's scale draws
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    sens = rng.lognormal(0.0, 1.0, size=W.shape[0])
    grad = rng.standard_normal(W.shape) * sens[:, None]
    return {"gradient": grad, "hessian": (grad**2).mean(axis=1)}


def random_quantized_table(n: int, m: int, bit_combo=(4, 3, 3), seed: int = 0) -> QuantizedTable:
    """Uniformly random integer table already in slot order (no float source).

    Used for large protocol runs where generating and quantizing a float
    table would cost more memory than the protocol itself.
    """
    rng = np.random.default_rng(seed)
    bits = assign_bitwidths(rng.random(n), bit_combo, n)
    perm = build_permutation(bits, bit_combo)
    bits = bits[perm]
    values = np.empty((n, m), dtype=np.int8)
    for i, b in enumerate(bits):
        half = 1 << (int(b) - 1)
        values[i] = rng.integers(-half, half, size=m, dtype=np.int8)
    return QuantizedTable(values, bits, np.ones(n), perm, tuple(bit_combo))
