"""Negacyclic polynomial ring Z_q[X]/(X^N + 1) with q a power of two.

Polynomials are plain ``numpy.uint64`` arrays whose last axis has length N;
leading axes are treated as a batch. Because q = 2^q_bits, reduction mod q
is a bit mask and uint64 wraparound is harmless (q divides 2^64).

Multiplication splits each operand into small signed limbs and convolves
them with a twisted complex FFT, which computes the negacyclic product
directly. Every limb product stays far below 2^53, so rounding the inverse
transform recovers the exact integer convolution; the rounding margin is
checked on every call and an exact big-integer path takes over if it is
ever violated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt

Poly = npt.NDArray[np.uint64]

DEFAULT_DEGREE = 4096
DEFAULT_Q_BITS = 48
DEFAULT_P_BITS = 13
DEFAULT_ERROR_BOUND = 8

_LIMB_BITS = 12
_SMALL_OPERAND_BITS = 15
_ROUNDING_MARGIN = 0.2


class DimensionError(ValueError):
    """Polynomial shape does not match the ring degree."""


@dataclass(frozen=True)
class RingParams:
    degree_n: int = DEFAULT_DEGREE
    q_bits: int = DEFAULT_Q_BITS
    p_bits: int = DEFAULT_P_BITS
    error_bound: int = DEFAULT_ERROR_BOUND

    def __post_init__(self) -> None:
        n = self.degree_n
        if n < 1 or n & (n - 1):
            raise ValueError(f"degree_n must be a power of two, got {n}")
        if not 1 <= self.q_bits <= 62:
            raise ValueError(f"q_bits must lie in [1, 62], got {self.q_bits}")
        if not 1 <= self.p_bits < self.q_bits:
            raise ValueError(f"need 1 <= p_bits < q_bits, got p_bits={self.p_bits}")
        if self.error_bound < 1:
            raise ValueError("error_bound must be positive")

    @property
    def q(self) -> int:
        return 1 << self.q_bits

    @property
    def p(self) -> int:
        return 1 << self.p_bits

    @property
    def delta_bits(self) -> int:
        return self.q_bits - self.p_bits

    @property
    def delta(self) -> int:
        return 1 << self.delta_bits

    @property
    def mask(self) -> np.uint64:
        return np.uint64(self.q - 1)


def make_poly(coeffs, params: RingParams) -> Poly:
    """Build a ring element from integer coefficients (any sign), reduced mod q."""
    arr = np.array([int(c) % params.q for c in np.ravel(coeffs)], dtype=np.uint64)
    if arr.shape[-1] != params.degree_n:
        raise DimensionError(f"expected {params.degree_n} coefficients, got {arr.shape[-1]}")
    return arr


def zero_poly(params: RingParams) -> Poly:
    return np.zeros(params.degree_n, dtype=np.uint64)


def monomial(power: int, params: RingParams, coeff: int = 1) -> Poly:
    """coeff * X^power, folding powers >= N with the negacyclic sign."""
    n = params.degree_n
    sign = -1 if (power // n) % 2 else 1
    out = zero_poly(params)
    out[power % n] = (sign * coeff) % params.q
    return out


def check_poly(a: Poly, params: RingParams) -> None:
    if a.shape[-1] != params.degree_n:
        raise DimensionError(f"expected last axis {params.degree_n}, got shape {a.shape}")
    if a.dtype != np.uint64:
        raise TypeError(f"ring elements are uint64 arrays, got {a.dtype}")


def _as_ring(a, params: RingParams) -> Poly:
    a = np.asarray(a)
    if a.dtype != np.uint64:
        a = np.asarray(a, dtype=np.int64).astype(np.uint64)
    check_poly(a, params)
    return a & params.mask


def poly_add(a: Poly, b: Poly, params: RingParams) -> Poly:
    a, b = _as_ring(a, params), _as_ring(b, params)
    return (a + b) & params.mask


def poly_sub(a: Poly, b: Poly, params: RingParams) -> Poly:
    a, b = _as_ring(a, params), _as_ring(b, params)
    return (a - b) & params.mask


def poly_neg(a: Poly, params: RingParams) -> Poly:
    return (np.uint64(0) - _as_ring(a, params)) & params.mask


def poly_scale(a: Poly, k: int, params: RingParams) -> Poly:
    """Multiply every coefficient by the integer k (mod q)."""
    return (_as_ring(a, params) * np.uint64(k % params.q)) & params.mask


def centered(a: Poly, modulus_bits: int) -> npt.NDArray[np.int64]:
    """Lift residues mod 2^modulus_bits to the signed range [-2^(b-1), 2^(b-1))."""
    half = np.uint64(1 << (modulus_bits - 1))
    full = np.uint64((1 << modulus_bits) - 1)
    a = np.asarray(a, dtype=np.uint64) & full
    # two's complement sign extension from bit (modulus_bits - 1)
    return ((a ^ half) - half).view(np.int64) if modulus_bits < 64 else a.view(np.int64)


# -- FFT machinery -----------------------------------------------------------


@lru_cache(maxsize=8)
def _twist(n: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n)
    psi = np.exp(1j * np.pi * j / n)
    return psi, np.conj(psi)


@dataclass(frozen=True)
class Spectrum:
    """Limb-wise transforms of one or more polynomials, ready for products.

    ``limbs`` has shape (L, ..., N); limb k carries weight 2^(shift * k).
    """

    limbs: np.ndarray
    shift: int
    max_abs: float


def _split_limbs(x: npt.NDArray[np.int64]) -> tuple[list[np.ndarray], int]:
    maxabs = int(np.abs(x).max()) if x.size else 0
    nbits = maxabs.bit_length() + 1
    if nbits <= _SMALL_OPERAND_BITS:
        return [x.astype(np.float64)], 0
    count = math.ceil(nbits / _LIMB_BITS)
    lo_mask = np.int64((1 << _LIMB_BITS) - 1)
    limbs = [((x >> np.int64(_LIMB_BITS * k)) & lo_mask).astype(np.float64) for k in range(count - 1)]
    limbs.append((x >> np.int64(_LIMB_BITS * (count - 1))).astype(np.float64))
    return limbs, _LIMB_BITS


def transform(a: Poly, params: RingParams) -> Spectrum:
    """Precompute the spectrum of ``a`` (batched along leading axes)."""
    a = _as_ring(a, params)
    signed = centered(a, params.q_bits)
    limbs, shift = _split_limbs(signed)
    psi, _ = _twist(params.degree_n)
    stacked = np.stack([lb * psi for lb in limbs])
    maxabs = float(max(np.abs(lb).max() for lb in limbs)) if a.size else 0.0
    return Spectrum(np.fft.fft(stacked, axis=-1), shift, maxabs)


def _product_terms(x: Spectrum, y: Spectrum, q_bits: int):
    """Group limb-pair spectral products by their power-of-two weight."""
    terms: dict[int, np.ndarray] = {}
    for i in range(x.limbs.shape[0]):
        for j in range(y.limbs.shape[0]):
            s = x.shift * i + y.shift * j
            if s >= q_bits:
                continue
            prod = x.limbs[i] * y.limbs[j]
            terms[s] = prod if s not in terms else terms[s] + prod
    return terms


def _recombine(terms: dict[int, np.ndarray], params: RingParams) -> Poly:
    _, inv_psi = _twist(params.degree_n)
    acc = None
    for s, spec in sorted(terms.items()):
        vals = np.fft.ifft(spec, axis=-1) * inv_psi
        real = vals.real
        rounded = np.rint(real)
        if rounded.size and np.abs(real - rounded).max() > _ROUNDING_MARGIN:
            raise ArithmeticError("FFT rounding margin exceeded")
        part = rounded.astype(np.int64).view(np.uint64) << np.uint64(s)
        acc = part if acc is None else acc + part
    return acc & params.mask


def spectral_dot(xs: Spectrum, ys: Spectrum, params: RingParams, axis: int = -2) -> Poly:
    """Sum over ``axis`` of the negacyclic products of paired polynomials.

    Both spectra must broadcast against each other; the reduction runs in
    the frequency domain so only one inverse transform per weight is paid.
    """
    terms = _product_terms(xs, ys, params.q_bits)
    summed = {s: t.sum(axis=axis) for s, t in terms.items()}
    return _recombine(summed, params)


def poly_negacyclic_mul(a: Poly, b: Poly, params: RingParams) -> Poly:
    """Product in Z_q[X]/(X^N + 1); batched over broadcastable leading axes."""
    a, b = _as_ring(a, params), _as_ring(b, params)
    try:
        return _recombine(_product_terms(transform(a, params), transform(b, params), params.q_bits), params)
    except ArithmeticError:
        return _mul_exact(a, b, params)


def _mul_exact(a: Poly, b: Poly, params: RingParams) -> Poly:
    """Kronecker substitution with Python integers; slow but unconditionally exact."""
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape, dtype=np.uint64)
    n, q = params.degree_n, params.q
    width = 2 * params.q_bits + n.bit_length() + 2
    for idx in np.ndindex(a.shape[:-1]):
        av = [int(v) for v in a[idx]]
        bv = centered(b[idx], params.q_bits).tolist()
        pos = sum(v << (width * k) for k, v in enumerate(av))
        # split b by sign so the packed integers stay non-negative
        bp = sum(v << (width * k) for k, v in enumerate(bv) if v > 0)
        bn = sum((-v) << (width * k) for k, v in enumerate(bv) if v < 0)
        prod_p, prod_n = pos * bp, pos * bn
        mask = (1 << width) - 1
        full = [((prod_p >> (width * k)) & mask) - ((prod_n >> (width * k)) & mask) for k in range(2 * n)]
        out[idx] = [(full[k] - full[k + n]) % q for k in range(n)]
    return out


# -- samplers -----------------------------------------------------------------


def sample_uniform(params: RingParams, rng: np.random.Generator, shape: tuple[int, ...] = ()) -> Poly:
    """Coefficients uniform in [0, q)."""
    return rng.integers(0, params.q, size=(*shape, params.degree_n), dtype=np.uint64)


def sample_ternary(params: RingParams, rng: np.random.Generator) -> Poly:
    """Coefficients uniform over {-1, 0, 1}, stored mod q."""
    vals = rng.integers(-1, 2, size=params.degree_n, dtype=np.int64)
    return vals.view(np.uint64) & params.mask


def sample_error(params: RingParams, rng: np.random.Generator, shape: tuple[int, ...] = ()) -> Poly:
    """Centered binomial over 2 * error_bound coin flips, so |e_i| <= error_bound."""
    size = (*shape, params.degree_n)
    b = params.error_bound
    vals = rng.binomial(b, 0.5, size=size) - rng.binomial(b, 0.5, size=size)
    return vals.astype(np.int64).view(np.uint64) & params.mask
