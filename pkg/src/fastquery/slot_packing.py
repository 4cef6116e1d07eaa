"""Several signed low-bit values per plaintext coefficient.

Each value of ``b`` bits sits in a slot of ``b + 1`` bits in offset-binary
(``u = v + 2^(b-1)``), so the top bit of every slot starts at zero. A mask
drawn uniformly from ``[0, 2^b)`` per slot therefore never carries into the
next slot: ``u + r <= 2^(b+1) - 2``. Slot 0 is the least significant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LayoutError(ValueError):
    pass


class CorruptCoefficientError(ValueError):
    """A guard bit was set where a freshly packed value must have zero."""


class ProtocolCorruptionError(ValueError):
    """Share reconstruction left the slot's signed range."""


@dataclass(frozen=True)
class SlotLayout:
    value_bits: tuple[int, ...]
    p_bits: int = 13

    def __post_init__(self) -> None:
        if not self.value_bits or min(self.value_bits) < 1:
            raise LayoutError(f"bad bit combination {self.value_bits}")
        if self.total_bits > self.p_bits:
            raise LayoutError(f"slots need {self.total_bits} bits, plaintext has {self.p_bits}")

    @property
    def num_slots(self) -> int:
        return len(self.value_bits)

    @property
    def slot_widths(self) -> tuple[int, ...]:
        return tuple(b + 1 for b in self.value_bits)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for w in self.slot_widths:
            out.append(acc)
            acc += w
        return tuple(out)

    @property
    def total_bits(self) -> int:
        return sum(self.slot_widths)

    @property
    def zero_code(self) -> int:
        """Packed coefficient of an all-zero value tuple."""
        return sum((1 << (b - 1)) << o for b, o in zip(self.value_bits, self.offsets))

    def value_range(self, slot: int) -> tuple[int, int]:
        b = self.value_bits[slot]
        return -(1 << (b - 1)), (1 << (b - 1)) - 1


def make_layout(bit_combo, p_bits: int = 13) -> SlotLayout:
    return SlotLayout(tuple(int(b) for b in bit_combo), p_bits)


def _slot_arrays(layout: SlotLayout):
    b = np.array(layout.value_bits, dtype=np.int64)
    return b, np.array(layout.offsets, dtype=np.int64), np.array(layout.slot_widths, dtype=np.int64)


def pack_signed(values, layout: SlotLayout):
    """Pack signed values; the last axis of ``values`` indexes slots."""
    v = np.asarray(values, dtype=np.int64)
    if v.shape[-1] != layout.num_slots:
        raise LayoutError(f"expected {layout.num_slots} values per coefficient, got {v.shape[-1]}")
    b, off, _ = _slot_arrays(layout)
    half = np.int64(1) << (b - 1)
    if np.any(v < -half) or np.any(v >= half):
        raise ValueError(f"values out of range for bit widths {layout.value_bits}")
    packed = ((v + half) << off).sum(axis=-1)
    return int(packed) if packed.ndim == 0 else packed


def slot_fields(coeff, layout: SlotLayout) -> np.ndarray:
    """Raw slot contents (coeff >> o_i) mod 2^(s_i); last axis indexes slots."""
    c = np.asarray(coeff, dtype=np.int64)[..., None]
    _, off, width = _slot_arrays(layout)
    return (c >> off) & ((np.int64(1) << width) - 1)


def unpack_signed(coeff, layout: SlotLayout) -> np.ndarray:
    fields = slot_fields(coeff, layout)
    b, _, _ = _slot_arrays(layout)
    if np.any(fields >> b):
        raise CorruptCoefficientError("guard bit set; coefficient was not a single packed value")
    if np.any(np.asarray(coeff) >> layout.total_bits):
        raise CorruptCoefficientError("bits above the last slot are set")
    return fields - (np.int64(1) << (b - 1))


_PACK_COLS = 4096


def pack_table(values, channel_bits, layout: SlotLayout) -> np.ndarray:
    """Merge every consecutive group of ``num_slots`` channels into one row.

    ``values`` is channel-major (n x m). A trailing partial group is padded
    with zero channels. Returns an (n_eff x m) array of packed coefficients.
    """
    values = np.asarray(values)
    n, m = values.shape
    k = layout.num_slots
    n_eff = -(-n // k)
    bits = [int(b) for b in channel_bits]
    if len(bits) != n:
        raise LayoutError(f"{len(bits)} channel bit-widths for {n} channels")
    expected = [layout.value_bits[i % k] for i in range(n)]
    if bits != expected:
        bad = next(i for i in range(n) if bits[i] != expected[i])
        raise LayoutError(f"channel {bad} has {bits[bad]} bits, layout slot expects {expected[bad]}")
    # one slot and one column block at a time keeps large tables in small dtypes
    out = np.full((n_eff, m), layout.zero_code, dtype=np.int64)
    for s, (b, off) in enumerate(zip(layout.value_bits, layout.offsets)):
        rows = values[s::k]
        half = 1 << (b - 1)
        for c0 in range(0, m, _PACK_COLS):
            block = rows[:, c0 : c0 + _PACK_COLS].astype(np.int64)
            if block.size and (block.min() < -half or block.max() >= half):
                raise ValueError(f"values out of range for bit widths {layout.value_bits}")
            out[: len(rows), c0 : c0 + _PACK_COLS] += block << off
    return out


@dataclass(frozen=True)
class SlotMask:
    packed: int
    per_slot: tuple[int, ...]


def sample_slot_masks(layout: SlotLayout, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent masks as an array of shape (count, num_slots)."""
    b, _, _ = _slot_arrays(layout)
    return rng.integers(0, np.int64(1) << b, size=(count, layout.num_slots), dtype=np.int64)


def pack_masks(per_slot, layout: SlotLayout) -> np.ndarray:
    _, off, _ = _slot_arrays(layout)
    return (np.asarray(per_slot, dtype=np.int64) << off).sum(axis=-1)


def sample_slot_mask(layout: SlotLayout, rng: np.random.Generator) -> SlotMask:
    r = sample_slot_masks(layout, 1, rng)[0]
    return SlotMask(int(pack_masks(r, layout)), tuple(int(x) for x in r))


def extract_client_shares(decrypted_coeff, layout: SlotLayout) -> np.ndarray:
    return slot_fields(decrypted_coeff, layout)


def reconstruct(c, r, b):
    """v = (c - r) - 2^(b-1); raises if the result leaves the b-bit range."""
    c, r, b = (np.asarray(x, dtype=np.int64) for x in (c, r, b))
    half = np.int64(1) << (b - 1)
    v = c - r - half
    if np.any(v < -half) or np.any(v >= half):
        raise ProtocolCorruptionError("reconstructed value outside its slot range")
    return int(v) if v.ndim == 0 else v
