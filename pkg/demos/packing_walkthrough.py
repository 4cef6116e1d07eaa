"""
Packing low-bit values into plaintext coefficients
===================================================

Three signed channel values share one 13-bit plaintext coefficient. Every
slot carries one spare high bit, so adding a random mask never carries into
the neighbouring slot. This script walks through one coefficient by hand,
then shows the coefficient-packing layout for a small matrix-vector product.
"""

import numpy as np

from fastquery import coeff_packing as cp
from fastquery import rlwe
from fastquery import slot_packing as sp
from fastquery.ring import RingParams

# %%
# A (4,3,3) layout: slot widths 5, 4, 4 bits at offsets 0, 5, 9
layout = sp.make_layout((4, 3, 3))
print("slot widths", layout.slot_widths, "offsets", layout.offsets, "bits used", layout.total_bits)

values = (3, -1, 2)
coeff = sp.pack_signed(values, layout)
print(f"pack{values} = {coeff} = {coeff:013b}")

# %%
# The server adds a mask drawn from the value bits of each slot. The client
# reads the slot fields, the server keeps the mask: together they are
# additive shares of the offset value.
rng = np.random.default_rng(0)
mask = sp.sample_slot_mask(layout, rng)
masked = coeff + mask.packed
client = sp.extract_client_shares(masked, layout)
print("mask per slot", mask.per_slot, "client shares", client.tolist())
print("reconstructed", sp.reconstruct(client, mask.per_slot, layout.value_bits).tolist())

# %%
# Summing two packed coefficients (what a two-hot query would do) can set a
# guard bit, which is why the lookup is always one-hot.
try:
    sp.unpack_signed(sp.pack_signed((7, 3, 3), layout) + sp.pack_signed((7, 3, 3), layout), layout)
except sp.CorruptCoefficientError as exc:
    print("two-hot sum rejected:", exc)

# %%
# Coefficient packing: the input vector is cut into chunks of k_c entries
# and each output polynomial carries k_o dot products.
params = RingParams(degree_n=16, q_bits=48, p_bits=13)
m, n_eff = 6, 5
plan = cp.plan_matvec(m, n_eff, params.degree_n)
print(f"k_c={plan.chunk_cols} k_o={plan.rows_per_poly} inputs={plan.num_input_polys} outputs={plan.num_output_polys}")

W = rng.integers(0, 50, (n_eff, m))
x = np.zeros(m, dtype=np.int64)
x[4] = 1
sk = rlwe.keygen(params, rng)
cts = [rlwe.encrypt(c, sk, rng) for c in cp.encode_input_vector(x, plan, params.p)]
out = rlwe.ct_matvec_pt(cts, cp.encode_weight_rows(W, plan, p=params.p))
result = cp.extract_output(np.stack([rlwe.decrypt(c, sk) for c in out]), plan)
print("homomorphic W x =", result.tolist())
print("column 4 of W   =", W[:, 4].tolist())
