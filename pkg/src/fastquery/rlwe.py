"""Symmetric BFV-style RLWE encryption over the power-of-two ring.

Only the operations the query protocol needs are provided: encrypt,
ciphertext-plaintext multiply, ciphertext +/- plaintext, ciphertext +
ciphertext and decrypt. Ciphertexts carry a worst-case noise bound that is
updated by every operation, and decryption refuses once the bound reaches
delta / 2.

Convention: b = a*s + e + delta*m (mod q), with delta = 2^(q_bits - p_bits).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import ring
from .ring import Poly, RingParams


class NoiseBudgetError(RuntimeError):
    """Tracked noise reached delta/2; decryption would not be exact."""


class PlaintextRangeError(ValueError):
    pass


class WireFormatError(ValueError):
    pass


class ParamsMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SecretKey:
    s: Poly
    params: RingParams


@dataclass(frozen=True)
class Ciphertext:
    a: Poly
    b: Poly
    noise_bound: int
    params: RingParams

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return (
            self.params == other.params
            and self.noise_bound == other.noise_bound
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None  # type: ignore[assignment]


PlaintextPoly = np.ndarray


def as_plaintext(coeffs, params: RingParams) -> PlaintextPoly:
    """Validate a plaintext: N integer coefficients in [0, p)."""
    m = np.asarray(coeffs)
    if m.shape[-1] != params.degree_n:
        raise ring.DimensionError(f"plaintext needs {params.degree_n} coefficients, got {m.shape}")
    if m.size and (m.min() < 0 or int(m.max()) >= params.p):
        raise PlaintextRangeError(f"plaintext coefficients must lie in [0, {params.p})")
    return m.astype(np.uint64)


def _check_same(p1: RingParams, p2: RingParams) -> None:
    if p1 != p2:
        raise ParamsMismatchError(f"parameter mismatch: {p1} vs {p2}")


def keygen(params: RingParams, rng: np.random.Generator) -> SecretKey:
    return SecretKey(ring.sample_ternary(params, rng), params)


def encrypt(m, sk: SecretKey, rng: np.random.Generator) -> Ciphertext:
    params = sk.params
    m = as_plaintext(m, params)
    a = ring.sample_uniform(params, rng)
    e = ring.sample_error(params, rng)
    a_s = ring.poly_negacyclic_mul(a, sk.s, params)
    b = (a_s + e + (m << np.uint64(params.delta_bits))) & params.mask
    return Ciphertext(a, b, params.error_bound, params)


def _phase(ct: Ciphertext, sk: SecretKey) -> Poly:
    """b - a*s = delta*m + noise (mod q)."""
    return ring.poly_sub(ct.b, ring.poly_negacyclic_mul(ct.a, sk.s, ct.params), ct.params)


def decrypt(ct: Ciphertext, sk: SecretKey) -> PlaintextPoly:
    params = ct.params
    _check_same(params, sk.params)
    if 2 * ct.noise_bound >= params.delta:
        raise NoiseBudgetError(f"noise bound {ct.noise_bound} >= delta/2 = {params.delta // 2}")
    phase = _phase(ct, sk)
    half = np.uint64(params.delta >> 1)
    return (((phase + half) & params.mask) >> np.uint64(params.delta_bits)) & np.uint64(params.p - 1)


def noise_budget(ct: Ciphertext, sk: SecretKey) -> int:
    """Remaining bits of headroom, measured with the key (testing aid only)."""
    params = ct.params
    noise = measured_noise(ct, sk)
    half_delta_bits = params.delta_bits - 1
    if noise == 0:
        return half_delta_bits
    return math.floor(half_delta_bits - math.log2(noise))


def measured_noise(ct: Ciphertext, sk: SecretKey) -> int:
    """max |true noise coefficient| of ``ct`` under ``sk``."""
    params = ct.params
    phase = _phase(ct, sk)
    # the noise is the signed residue of the phase modulo delta
    return int(np.abs(ring.centered(phase, params.delta_bits)).max())


def ct_add_ct(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check_same(c1.params, c2.params)
    p = c1.params
    return Ciphertext(ring.poly_add(c1.a, c2.a, p), ring.poly_add(c1.b, c2.b, p), c1.noise_bound + c2.noise_bound, p)


def _scaled(u, params: RingParams) -> Poly:
    return as_plaintext(u, params) << np.uint64(params.delta_bits)


def ct_add_pt(ct: Ciphertext, u) -> Ciphertext:
    p = ct.params
    return Ciphertext(ct.a, ring.poly_add(ct.b, _scaled(u, p), p), ct.noise_bound, p)


def ct_sub_pt(ct: Ciphertext, u) -> Ciphertext:
    p = ct.params
    return Ciphertext(ct.a, ring.poly_sub(ct.b, _scaled(u, p), p), ct.noise_bound, p)


def _mul_noise(noise: int, w: np.ndarray, params: RingParams) -> int:
    bound = noise * params.degree_n * int(w.max(initial=0))
    if 2 * bound >= params.delta:
        raise NoiseBudgetError(f"product noise bound {bound} >= delta/2 = {params.delta // 2}")
    return bound


def ct_mul_pt(ct: Ciphertext, w) -> Ciphertext:
    p = ct.params
    w = as_plaintext(w, p)
    bound = _mul_noise(ct.noise_bound, w, p)
    prod = ring.poly_negacyclic_mul(np.stack([ct.a, ct.b]), w, p)
    return Ciphertext(prod[0], prod[1], bound, p)


def prepare_cts(cts: list[Ciphertext]) -> ring.Spectrum:
    """Spectrum of all (a, b) components, shape (L, 2, C, N); reusable across
    many ``ct_matvec_pt`` calls against the same ciphertexts."""
    params = cts[0].params
    for ct in cts[1:]:
        _check_same(params, ct.params)
    comps = np.stack([np.stack([ct.a for ct in cts]), np.stack([ct.b for ct in cts])])
    return ring.transform(comps, params)


_BATCH_BYTES = 1 << 26


def ct_matvec_pt(cts: list[Ciphertext], weights, prepared: ring.Spectrum | None = None) -> list[Ciphertext]:
    """Row-wise sums of products: out[g] = sum_c cts[c] * weights[g, c].

    Equivalent to folding ``ct_mul_pt`` results with ``ct_add_ct``, but the
    accumulation runs in the frequency domain. ``weights`` has shape
    (G, C, N) with C == len(cts).
    """
    if not cts:
        raise ValueError("need at least one ciphertext")
    params = cts[0].params
    weights = as_plaintext(weights, params)
    if weights.ndim != 3 or weights.shape[1] != len(cts):
        raise ring.DimensionError(f"weights must have shape (G, {len(cts)}, N), got {weights.shape}")

    n = params.degree_n
    noise = np.array([ct.noise_bound for ct in cts], dtype=object)
    bounds = []
    for g, wm in enumerate(weights.max(axis=-1)):
        total = int((noise * n * wm.astype(object)).sum())
        if 2 * total >= params.delta:
            raise NoiseBudgetError(f"row {g}: noise bound {total} >= delta/2 = {params.delta // 2}")
        bounds.append(total)

    ct_spec = prepared if prepared is not None else prepare_cts(cts)
    xs = ring.Spectrum(ct_spec.limbs[:, :, None], ct_spec.shift, ct_spec.max_abs)
    step = max(1, _BATCH_BYTES // (16 * len(cts) * n * 2))
    out = []
    for start in range(0, weights.shape[0], step):
        w_spec = ring.transform(weights[start : start + step], params)
        ys = ring.Spectrum(w_spec.limbs[:, None], w_spec.shift, w_spec.max_abs)
        # (2, G, C, N) reduced over C
        prod = ring.spectral_dot(xs, ys, params, axis=-2)
        out.extend(
            Ciphertext(prod[0, k], prod[1, k], bounds[start + k], params) for k in range(prod.shape[1])
        )
    return out


# -- wire format ----------------------------------------------------------------

MAGIC = b"FQCT"
VERSION = 1
_HEADER = struct.Struct("<4sBIBB")
HEADER_LEN = _HEADER.size


def ct_wire_size(params: RingParams) -> int:
    return HEADER_LEN + math.ceil(2 * params.degree_n * params.q_bits / 8)


def pack_bits(values: np.ndarray, width: int) -> bytes:
    """Concatenate ``width``-bit fields, little-endian bit order, zero padded."""
    v = np.asarray(values, dtype=np.uint64).ravel()
    bits = ((v[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, width: int, count: int) -> np.ndarray:
    needed = math.ceil(count * width / 8)
    if len(data) != needed:
        raise WireFormatError(f"expected {needed} payload bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits[count * width:].any():
        raise WireFormatError("nonzero padding bits")
    fields = bits[: count * width].reshape(count, width).astype(np.uint64)
    return (fields << np.arange(width, dtype=np.uint64)).sum(axis=1, dtype=np.uint64)


def serialize_ct(ct: Ciphertext) -> bytes:
    p = ct.params
    header = _HEADER.pack(MAGIC, VERSION, p.degree_n, p.q_bits, p.p_bits)
    return header + pack_bits(np.concatenate([ct.a, ct.b]), p.q_bits)


def read_ct_header(data: bytes) -> tuple[int, int, int]:
    """Parse and check the header, returning (degree_n, q_bits, p_bits)."""
    if len(data) < HEADER_LEN:
        raise WireFormatError("truncated ciphertext header")
    magic, version, n, q_bits, p_bits = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireFormatError(f"unsupported version {version}")
    return n, q_bits, p_bits


def deserialize_ct(data: bytes, params: RingParams, noise_bound: int | None = None) -> Ciphertext:
    """Inverse of ``serialize_ct``.

    The noise bound is not on the wire. The receiver supplies the bound it
    can derive from public information; by default a fresh ciphertext
    (bound = error_bound) is assumed.
    """
    n, q_bits, p_bits = read_ct_header(data)
    if (n, q_bits, p_bits) != (params.degree_n, params.q_bits, params.p_bits):
        raise ParamsMismatchError(f"header params (N={n}, q_bits={q_bits}, p_bits={p_bits}) do not match {params}")
    coeffs = unpack_bits(data[HEADER_LEN:], q_bits, 2 * n)
    bound = params.error_bound if noise_bound is None else noise_bound
    return Ciphertext(coeffs[:n], coeffs[n:], bound, params)
