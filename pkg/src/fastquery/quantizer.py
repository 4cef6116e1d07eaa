"""Per-channel mixed-precision quantization of an embedding table.

Tables here are channel-major: ``W[i, t]`` is channel ``i`` of token ``t``.
The pipeline is saliency scoring -> bit-width assignment -> a channel
permutation that makes every consecutive group match the slot layout ->
symmetric uniform quantization with (by default) power-of-two scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .slot_packing import SlotLayout, make_layout


class Criterion(str, Enum):
    ABSOLUTE_VALUE = "absolute_value"
    RANDOM = "random"
    GRADIENT = "gradient"
    HESSIAN = "hessian"
    GRADIENT_TIMES_ABSVALUE = "gradient_times_absvalue"


class MissingStatisticsError(ValueError):
    pass


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class QuantConfig:
    granularity: str = "per_channel"
    bit_combo: tuple[int, ...] = (4, 3, 3)
    criterion: Criterion = Criterion.ABSOLUTE_VALUE
    pow2_scales: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.granularity not in ("per_channel", "per_tensor"):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "bit_combo", tuple(int(b) for b in self.bit_combo))
        make_layout(self.bit_combo)


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel statistics feeding the saliency criteria."""

    mean_abs: np.ndarray
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.mean_abs)
        for name in ("gradient", "hessian"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries, expected {n}")
        for arr in (self.mean_abs, self.gradient, self.hessian):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("channel statistics must be finite")


@dataclass
class QuantizedTable:
    values: np.ndarray  # (n, m) signed ints, channels in permuted order
    channel_bits: np.ndarray  # (n,), permuted order
    scales: np.ndarray  # (n,), permuted order
    permutation: np.ndarray = field(default=None)  # position k holds original channel permutation[k]
    bit_combo: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        n = self.values.shape[0]
        if self.permutation is None:
            self.permutation = np.arange(n)
        self.channel_bits = np.asarray(self.channel_bits, dtype=np.int64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.permutation = np.asarray(self.permutation, dtype=np.int64)
        if sorted(self.permutation.tolist()) != list(range(n)):
            raise ValueError("permutation is not a bijection")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        half = 1 << (self.channel_bits - 1)
        if np.any(self.values < -half[:, None]) or np.any(self.values >= half[:, None]):
            raise ValueError("quantized values exceed their channel bit-widths")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def layout(self) -> SlotLayout | None:
        return None if self.bit_combo is None else make_layout(self.bit_combo)


def _check_finite(W: np.ndarray) -> None:
    if not np.all(np.isfinite(W)):
        raise ValueError("table contains non-finite values")


def channel_stats(W, gradient=None, hessian=None) -> ChannelStats:
    """Summaries per channel; ``gradient`` may be a full matrix or per-channel."""
    W = np.asarray(W, dtype=np.float64)
    _check_finite(W)

    def per_channel(x):
        if x is None:
            return None
        x = np.asarray(x, dtype=np.float64)
        return np.abs(x).mean(axis=1) if x.ndim == 2 else x

    return ChannelStats(np.abs(W).mean(axis=1), per_channel(gradient), per_channel(hessian))


def channel_saliency(W, criterion: Criterion | str, aux: dict | None = None, seed: int = 0) -> np.ndarray:
    """One non-negative score per channel; higher means more salient.

    ``aux`` supplies ``gradient`` (matrix like W, or per-channel vector) and/or
    ``hessian`` (per-channel diagonal summary) when the criterion needs them.
    """
    W = np.asarray(W, dtype=np.float64)
    _check_finite(W)
    criterion = Criterion(criterion)
    aux = aux or {}
    if criterion is Criterion.ABSOLUTE_VALUE:
        return np.abs(W).mean(axis=1)
    if criterion is Criterion.RANDOM:
        return np.random.default_rng(seed).random(W.shape[0])
    if criterion is Criterion.HESSIAN:
        if aux.get("hessian") is None:
            raise MissingStatisticsError("hessian criterion needs aux['hessian']")
        h = np.asarray(aux["hessian"], dtype=np.float64)
        return np.abs(h).mean(axis=1) if h.ndim == 2 else np.abs(h)
    g = aux.get("gradient")
    if g is None:
        raise MissingStatisticsError(f"{criterion.value} criterion needs aux['gradient']")
    g = np.asarray(g, dtype=np.float64)
    if criterion is Criterion.GRADIENT:
        return np.abs(g).mean(axis=1) if g.ndim == 2 else np.abs(g)
    if g.ndim != 2:
        raise MissingStatisticsError("gradient_times_absvalue needs a full gradient matrix")
    return np.abs(g * W).mean(axis=1)


def _slot_counts(n: int, k: int) -> list[int]:
    groups = -(-n // k)
    tail = n - (groups - 1) * k
    return [groups - 1 + (1 if i < tail else 0) for i in range(k)]


def assign_bitwidths(scores, bit_combo, n: int | None = None) -> np.ndarray:
    """Widest slots go to the highest scores; ties favour the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores) if n is None else n
    if len(scores) != n:
        raise ValueError(f"{len(scores)} scores for {n} channels")
    combo = list(bit_combo)
    counts = _slot_counts(n, len(combo))
    # slot positions ordered by width, widest first (stable)
    positions = sorted(range(len(combo)), key=lambda i: -combo[i])
    ranked = np.lexsort((np.arange(n), -scores))
    bits = np.empty(n, dtype=np.int64)
    start = 0
    for pos in positions:
        bits[ranked[start : start + counts[pos]]] = combo[pos]
        start += counts[pos]
    return bits


def build_permutation(channel_bits, bit_combo) -> np.ndarray:
    """Order channels so consecutive groups follow ``bit_combo``; stable per width."""
    bits = [int(b) for b in channel_bits]
    pools: dict[int, list[int]] = {}
    for i, b in enumerate(bits):
        pools.setdefault(b, []).append(i)
    combo = list(bit_combo)
    for b in pools:
        if b not in combo:
            raise AssignmentError(f"{b}-bit channels have no slot in {tuple(combo)}")
    cursor = {b: 0 for b in pools}
    perm: list[int] = []
    while len(perm) < len(bits):
        for b in combo:
            if len(perm) == len(bits):
                break
            pool = pools.get(b, [])
            if cursor.get(b, 0) >= len(pool):
                raise AssignmentError(f"ran out of {b}-bit channels at position {len(perm)}")
            perm.append(pool[cursor[b]])
            cursor[b] += 1
    return np.array(perm, dtype=np.int64)


def pow2_round(x: float) -> float:
    """Nearest power of two in the log domain, halves rounded up."""
    return 2.0 ** math.floor(math.log2(x) + 0.5)


def _scale_for(max_abs: float, bits: int, pow2: bool) -> float:
    if max_abs == 0:
        return 1.0
    raw = max_abs / ((1 << (bits - 1)) - 1)
    return pow2_round(raw) if pow2 else raw


def quantize_values(W, bits, scales) -> np.ndarray:
    """round(W / scale) clamped to each channel's signed range (channel-major)."""
    W = np.asarray(W, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.int64)[:, None]
    scales = np.asarray(scales, dtype=np.float64)[:, None]
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return np.clip(np.rint(W / scales), lo, hi).astype(np.int64)


def quantize_per_channel(W, channel_bits, pow2_scales: bool = True) -> QuantizedTable:
    W = np.asarray(W, dtype=np.float64)
    _check_finite(W)
    bits = np.asarray(channel_bits, dtype=np.int64)
    if len(bits) != W.shape[0]:
        raise ValueError(f"{len(bits)} bit-widths for {W.shape[0]} channels")
    max_abs = np.abs(W).max(axis=1) if W.size else np.zeros(W.shape[0])
    scales = np.array([_scale_for(float(a), int(b), pow2_scales) for a, b in zip(max_abs, bits)])
    return QuantizedTable(quantize_values(W, bits, scales), bits, scales)


def quantize_per_tensor(W, bits: int, pow2_scales: bool = True) -> QuantizedTable:
    """Round-to-nearest with one scale shared by every channel."""
    W = np.asarray(W, dtype=np.float64)
    _check_finite(W)
    n = W.shape[0]
    scale = _scale_for(float(np.abs(W).max()) if W.size else 0.0, bits, pow2_scales)
    ch_bits = np.full(n, bits, dtype=np.int64)
    scales = np.full(n, scale)
    return QuantizedTable(quantize_values(W, ch_bits, scales), ch_bits, scales)


def quantize_table(W, config: QuantConfig = QuantConfig(), aux: dict | None = None) -> QuantizedTable:
    """Full pipeline: scores, bit-widths, permutation, then quantization."""
    W = np.asarray(W, dtype=np.float64)
    _check_finite(W)
    n = W.shape[0]
    if config.granularity == "per_tensor":
        qt = quantize_per_tensor(W, max(config.bit_combo), config.pow2_scales)
        return qt
    scores = channel_saliency(W, config.criterion, aux, seed=config.seed)
    bits = assign_bitwidths(scores, config.bit_combo, n)
    perm = build_permutation(bits, config.bit_combo)
    qt = quantize_per_channel(W[perm], bits[perm], config.pow2_scales)
    qt.permutation = perm
    qt.bit_combo = config.bit_combo
    return qt


def dequantize(Q: QuantizedTable, unpermute: bool = False) -> np.ndarray:
    deq = Q.values * Q.scales[:, None]
    if unpermute:
        out = np.empty_like(deq)
        out[Q.permutation] = deq
        return out
    return deq


def reconstruction_error(W, Q: QuantizedTable, weights=None) -> float:
    """Mean squared error between W (original channel order) and Q.

    ``weights`` optionally gives one non-negative weight per token; the error
    is then the weighted mean over tokens.
    """
    W = np.asarray(W, dtype=np.float64)
    deq = dequantize(Q, unpermute=True)
    if W.shape != deq.shape:
        raise ValueError(f"shape mismatch: {W.shape} vs {deq.shape}")
    sq = (W - deq) ** 2
    if weights is None:
        return float(sq.mean())
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (W.shape[1],):
        raise ValueError(f"need {W.shape[1]} token weights, got {w.shape}")
    return float((sq * w[None, :]).sum() / (w.sum() * W.shape[0]))
