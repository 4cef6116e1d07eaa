"""Coefficient encoding that turns a ring product into a block mat-vec.

The input vector is split into chunks of ``k_c`` entries laid out in
ascending coefficient order. A ``k_o x k_c`` weight block puts row ``i``
reversed at offset ``i * k_c``, so coefficient ``i * k_c + k_c - 1`` of the
product is exactly the dot product of row ``i`` with the chunk. No term of
interest wraps past X^N because ``k_c * k_o <= N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rlwe import PlaintextRangeError


@dataclass(frozen=True)
class MatVecPlan:
    m: int
    n_eff: int
    degree_n: int
    chunk_cols: int
    rows_per_poly: int

    @property
    def num_input_polys(self) -> int:
        return math.ceil(self.m / self.chunk_cols)

    @property
    def num_output_polys(self) -> int:
        return math.ceil(self.n_eff / self.rows_per_poly)

    @property
    def num_partial_products(self) -> int:
        return self.num_output_polys * self.num_input_polys

    def extraction_index(self, row_in_poly: int) -> int:
        return row_in_poly * self.chunk_cols + self.chunk_cols - 1

    @property
    def extraction_indices(self) -> np.ndarray:
        return np.arange(self.rows_per_poly) * self.chunk_cols + self.chunk_cols - 1

    def locate(self, row: int) -> tuple[int, int]:
        """(output poly, coefficient index) holding output ``row``."""
        g, i = divmod(row, self.rows_per_poly)
        return g, self.extraction_index(i)


def plan_matvec(m: int, n_eff: int, degree_n: int) -> MatVecPlan:
    if m < 1 or n_eff < 1:
        raise ValueError(f"m and n_eff must be positive, got m={m}, n_eff={n_eff}")
    if degree_n < 1 or degree_n & (degree_n - 1):
        raise ValueError(f"degree_n must be a power of two, got {degree_n}")
    k_c = min(m, degree_n)
    k_o = degree_n // k_c
    return MatVecPlan(m, n_eff, degree_n, k_c, k_o)


def _check_range(values: np.ndarray, p: int | None) -> None:
    if values.size and values.min() < 0:
        raise PlaintextRangeError("encoded values must be non-negative")
    if p is not None and values.size and int(values.max()) >= p:
        raise PlaintextRangeError(f"encoded values must be < p = {p}")


def encode_input_vector(x, plan: MatVecPlan, p: int | None = None) -> list[np.ndarray]:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (plan.m,):
        raise ValueError(f"input length {x.shape} does not match m={plan.m}")
    _check_range(x, p)
    padded = np.zeros(plan.num_input_polys * plan.chunk_cols, dtype=np.uint64)
    padded[: plan.m] = x
    out = []
    for c in range(plan.num_input_polys):
        poly = np.zeros(plan.degree_n, dtype=np.uint64)
        poly[: plan.chunk_cols] = padded[c * plan.chunk_cols : (c + 1) * plan.chunk_cols]
        out.append(poly)
    return out


def decode_input_vector(polys, plan: MatVecPlan) -> np.ndarray:
    flat = np.concatenate([np.asarray(p)[: plan.chunk_cols] for p in polys])
    return flat[: plan.m].astype(np.int64)


def encode_weight_block(w_sub, plan: MatVecPlan, p: int | None = None) -> np.ndarray:
    """Place a (<= k_o) x (<= k_c) block; missing rows/columns are zero."""
    w_sub = np.asarray(w_sub, dtype=np.int64)
    if w_sub.ndim != 2 or w_sub.shape[0] > plan.rows_per_poly or w_sub.shape[1] > plan.chunk_cols:
        raise ValueError(f"block shape {w_sub.shape} exceeds ({plan.rows_per_poly}, {plan.chunk_cols})")
    _check_range(w_sub, p)
    block = np.zeros((plan.rows_per_poly, plan.chunk_cols), dtype=np.uint64)
    block[: w_sub.shape[0], : w_sub.shape[1]] = w_sub
    poly = np.zeros(plan.degree_n, dtype=np.uint64)
    poly[: plan.rows_per_poly * plan.chunk_cols] = block[:, ::-1].ravel()
    return poly


def encode_weight_rows(W, plan: MatVecPlan, polys: range | None = None, p: int | None = None) -> np.ndarray:
    """Weight polynomials for a span of output polys, shape (G, C, N).

    Same layout as ``encode_weight_block`` applied to every block, done in
    one pass so a server can stream a large table in slices.
    """
    W = np.asarray(W)
    if W.shape != (plan.n_eff, plan.m):
        raise ValueError(f"matrix shape {W.shape} does not match ({plan.n_eff}, {plan.m})")
    polys = range(plan.num_output_polys) if polys is None else polys
    k_o, k_c, C = plan.rows_per_poly, plan.chunk_cols, plan.num_input_polys
    rows = W[polys.start * k_o : min(polys.stop * k_o, plan.n_eff)]
    _check_range(rows, p)
    G = len(polys)
    grid = np.zeros((G * k_o, C * k_c), dtype=np.uint64)
    grid[: rows.shape[0], : plan.m] = rows
    # (G, k_o, C, k_c) -> (G, C, k_o, k_c), reverse columns, flatten block
    blocks = grid.reshape(G, k_o, C, k_c).transpose(0, 2, 1, 3)[..., ::-1]
    out = np.zeros((G, C, plan.degree_n), dtype=np.uint64)
    out[..., : k_o * k_c] = blocks.reshape(G, C, k_o * k_c)
    return out


def extract_output(result_polys, plan: MatVecPlan) -> np.ndarray:
    res = np.asarray(result_polys)
    if res.shape != (plan.num_output_polys, plan.degree_n):
        raise ValueError(f"expected {plan.num_output_polys} result polynomials of degree {plan.degree_n}")
    return res[:, plan.extraction_indices].ravel()[: plan.n_eff]


def matvec_oracle(W, x, p: int) -> np.ndarray:
    W = np.asarray(W, dtype=object)
    x = np.asarray(x, dtype=object)
    return np.array([int(v) % p for v in W.dot(x)], dtype=np.int64)
