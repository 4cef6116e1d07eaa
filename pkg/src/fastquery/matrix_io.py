"""File formats: binary matrix container, quantized-table sidecar, frequency lists.

Matrix container layout (little-endian):

    magic "FQMX" | version u8 | dtype code u8 | rows u32 | cols u32 | row-major payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .quantizer import QuantizedTable

MAGIC = b"FQMX"
VERSION = 1
_HEADER = struct.Struct("<4sBBII")

DTYPE_CODES = {
    1: np.dtype("<i1"),
    2: np.dtype("<i2"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("<f4"),
    6: np.dtype("<f8"),
    7: np.dtype("<u8"),
}
_CODE_OF = {dt: code for code, dt in DTYPE_CODES.items()}


class ContainerError(ValueError):
    pass


def encode_matrix(a) -> bytes:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ContainerError(f"only 2-D matrices are stored, got {a.ndim}-D")
    dt = a.dtype.newbyteorder("<")
    if dt not in _CODE_OF:
        raise ContainerError(f"unsupported dtype {a.dtype}")
    header = _HEADER.pack(MAGIC, VERSION, _CODE_OF[dt], *a.shape)
    return header + np.ascontiguousarray(a, dtype=dt).tobytes()


def decode_matrix(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, code, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in DTYPE_CODES:
        raise ContainerError(f"unknown dtype code {code}")
    dt = DTYPE_CODES[code]
    expected = rows * cols * dt.itemsize
    if len(data) - _HEADER.size != expected:
        raise ContainerError(f"payload has {len(data) - _HEADER.size} bytes, header implies {expected}")
    return np.frombuffer(data, dtype=dt, offset=_HEADER.size).reshape(rows, cols).copy()


def save_matrix(path, a) -> None:
    Path(path).write_bytes(encode_matrix(a))


def load_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def _smallest_int(values: np.ndarray) -> np.ndarray:
    for dt in (np.int8, np.int16, np.int32):
        info = np.iinfo(dt)
        if values.size == 0 or (values.min() >= info.min and values.max() <= info.max):
            return values.astype(dt)
    return values.astype(np.int64)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_quantized(path, table: QuantizedTable) -> None:
    """Values go into the container, scales/bits/permutation into a JSON sidecar."""
    save_matrix(path, _smallest_int(np.asarray(table.values)))
    meta = {
        "channel_bits": table.channel_bits.tolist(),
        "scales": table.scales.tolist(),
        "permutation": table.permutation.tolist(),
        "bit_combo": None if table.bit_combo is None else list(table.bit_combo),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=1) + "\n")


def load_quantized(path) -> QuantizedTable:
    values = load_matrix(path).astype(np.int64)
    meta = json.loads(sidecar_path(path).read_text())
    combo = meta.get("bit_combo")
    return QuantizedTable(
        values,
        np.array(meta["channel_bits"], dtype=np.int64),
        np.array(meta["scales"], dtype=np.float64),
        np.array(meta["permutation"], dtype=np.int64),
        None if combo is None else tuple(combo),
    )


def write_freqs(path, freqs) -> None:
    lines = [f"{i} {int(c)}" for i, c in enumerate(np.asarray(freqs))]
    Path(path).write_text("# token_id count\n" + "\n".join(lines) + "\n")


def read_freqs(path, m: int | None = None) -> np.ndarray:
    """Two-column ``token_id count`` text; missing tokens count zero."""
    pairs: dict[int, int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'token_id count'")
        tok, count = int(parts[0]), int(parts[1])
        if tok < 0 or count < 0:
            raise ValueError(f"{path}:{lineno}: negative token id or count")
        if tok in pairs:
            raise ValueError(f"{path}:{lineno}: duplicate token id {tok}")
        pairs[tok] = count
    size = (max(pairs) + 1 if pairs else 0) if m is None else m
    out = np.zeros(size, dtype=np.int64)
    for tok, count in pairs.items():
        if tok >= size:
            raise ValueError(f"token id {tok} outside vocabulary of size {size}")
        out[tok] = count
    return out
