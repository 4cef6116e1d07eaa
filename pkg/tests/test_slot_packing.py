import itertools

import numpy as np
import pytest

from fastquery import slot_packing as sp
from oracles import pack_bits_string

L433 = sp.make_layout((4, 3, 3))


def test_layouts():
    assert (L433.slot_widths, L433.offsets, L433.total_bits) == ((5, 4, 4), (0, 5, 9), 13)
    l622 = sp.make_layout((6, 2, 2))
    assert (l622.slot_widths, l622.total_bits) == ((7, 3, 3), 13)
    with pytest.raises(sp.LayoutError):
        sp.make_layout((8, 8), 13)
    assert L433.zero_code == 2184


def test_pack_examples():
    assert sp.pack_signed((-8, -4, -4), L433) == 0
    assert sp.pack_signed((0, 0, 0), L433) == 2184
    assert sp.pack_signed((3, -1, 2), L433) == 3179 == pack_bits_string((3, -1, 2), (4, 3, 3))
    assert sp.unpack_signed(0, L433).tolist() == [-8, -4, -4]
    assert sp.unpack_signed(3179, L433).tolist() == [3, -1, 2]
    with pytest.raises(ValueError):
        sp.pack_signed((8, 0, 0), L433)


@pytest.mark.parametrize("combo", [(4, 3, 3), (5, 3, 2), (6, 2, 2)])
def test_bijection_exhaustive(combo):
    layout = sp.make_layout(combo)
    cube = np.array(list(itertools.product(*[range(-(1 << (b - 1)), 1 << (b - 1)) for b in combo])))
    packed = sp.pack_signed(cube, layout)
    assert len(set(packed.tolist())) == len(cube) == 2 ** sum(combo)
    ref = [pack_bits_string(v, combo) for v in cube.tolist()]
    assert packed.tolist() == ref
    assert np.array_equal(sp.unpack_signed(packed, layout), cube)


def test_guard_bit_detection():
    with pytest.raises(sp.CorruptCoefficientError):
        sp.unpack_signed(1 << 4, L433)
    with pytest.raises(sp.CorruptCoefficientError):
        sp.unpack_signed(1 << 13, L433)


def test_two_hot_sum_breaks_guard_bits():
    # adding two packed values (what a two-hot query would produce) overflows a slot
    a = sp.pack_signed((7, 3, 3), L433)
    with pytest.raises(sp.CorruptCoefficientError):
        sp.unpack_signed(a + a, L433)


def test_pack_table(rng):
    n, m = 7, 20
    bits = [L433.value_bits[i % 3] for i in range(n)]
    values = np.stack([rng.integers(-(1 << (b - 1)), 1 << (b - 1), m) for b in bits])
    packed = sp.pack_table(values, bits, L433)
    assert packed.shape == (3, m)
    for g in range(3):
        for j in range(m):
            trip = [int(values[3 * g + s, j]) if 3 * g + s < n else 0 for s in range(3)]
            assert packed[g, j] == pack_bits_string(trip, (4, 3, 3))
    zeros = sp.pack_table(np.zeros((6, 5), dtype=np.int8), [4, 3, 3] * 2, L433)
    assert (zeros == 2184).all()
    with pytest.raises(sp.LayoutError):
        sp.pack_table(values, [3] + bits[1:], L433)


def test_pack_table_n_eff():
    packed = sp.pack_table(np.zeros((4096, 1), dtype=np.int8), [L433.value_bits[i % 3] for i in range(4096)], L433)
    assert packed.shape[0] == 1366


def test_masks(golden):
    masks = sp.sample_slot_masks(L433, 8, np.random.default_rng(5))
    assert masks.tolist() == golden["slot_masks"]
    big = sp.sample_slot_masks(L433, 100_000, np.random.default_rng(6))
    assert big.min() == 0 and big.max(axis=0).tolist() == [15, 7, 7]
    m = sp.sample_slot_mask(L433, np.random.default_rng(7))
    assert m.packed == sum(r << o for r, o in zip(m.per_slot, L433.offsets))


@pytest.mark.parametrize("combo", [(4, 3, 3), (5, 3, 2), (6, 2, 2)])
def test_no_carry_exhaustive(combo):
    layout = sp.make_layout(combo)
    ranges = [range(-(1 << (b - 1)), 1 << (b - 1)) for b in combo]
    values = np.array(list(itertools.product(*ranges)))
    masks = np.array(list(itertools.product(*[range(1 << b) for b in combo])))
    packed = sp.pack_signed(values, layout)
    packed_masks = sp.pack_masks(masks, layout)
    u = values + (1 << (np.array(combo) - 1))
    p = 1 << layout.p_bits
    for row in range(0, len(masks), 64):
        block = masks[row : row + 64]
        total = (packed[None, :] + packed_masks[row : row + 64, None]) % p
        fields = sp.extract_client_shares(total, layout)
        assert np.array_equal(fields, u[None, :, :] + block[:, None, :])
        rec = sp.reconstruct(fields, np.broadcast_to(block[:, None, :], fields.shape), np.array(combo))
        assert np.array_equal(rec, np.broadcast_to(values, rec.shape))


def test_extract_and_reconstruct_edges(rng):
    coeff = int(rng.integers(0, 1 << 13))
    fields = sp.extract_client_shares(coeff, L433)
    assert sum(int(f) << o for f, o in zip(fields, L433.offsets)) == coeff
    assert sp.reconstruct(5, 5, 4) == -8
    with pytest.raises(sp.ProtocolCorruptionError):
        sp.reconstruct(31, 0, 4)
