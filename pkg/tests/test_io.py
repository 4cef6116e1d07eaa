import struct

import numpy as np
import pytest

from fastquery import matrix_io as mio
from fastquery.quantizer import QuantConfig, quantize_table
from fastquery.synthetic import lognormal_channel_table


@pytest.mark.parametrize("dtype", ["i1", "i2", "i4", "i8", "f4", "f8", "u8"])
def test_roundtrip(dtype, rng):
    a = (rng.standard_normal((5, 7)) * 50).astype(dtype)
    data = mio.encode_matrix(a)
    assert len(data) == 14 + a.nbytes
    b = mio.decode_matrix(data)
    assert b.dtype == np.dtype(dtype).newbyteorder("<") and np.array_equal(a, b)


def test_header_layout():
    data = mio.encode_matrix(np.array([[1, 2, 3]], dtype=np.int16))
    assert data[:4] == b"FQMX"
    assert struct.unpack("<BBII", data[4:14]) == (1, 2, 1, 3)
    assert data[14:] == b"\x01\x00\x02\x00\x03\x00"


def test_big_endian_input_stored_little():
    a = np.arange(6, dtype=">i4").reshape(2, 3)
    assert np.array_equal(mio.decode_matrix(mio.encode_matrix(a)), a)


def test_container_errors():
    good = mio.encode_matrix(np.zeros((2, 2)))
    for bad in (good[:10], b"XXXX" + good[4:], good[:4] + b"\x09" + good[5:], good[:5] + b"\x63" + good[6:], good[:-1]):
        with pytest.raises(mio.ContainerError):
            mio.decode_matrix(bad)
    with pytest.raises(mio.ContainerError):
        mio.encode_matrix(np.zeros(3))
    with pytest.raises(mio.ContainerError):
        mio.encode_matrix(np.zeros((2, 2), dtype=np.complex64))


def test_quantized_sidecar(tmp_path):
    W = lognormal_channel_table(50, 9, seed=0).T
    qt = quantize_table(W, QuantConfig())
    path = tmp_path / "q.fqmx"
    mio.save_quantized(path, qt)
    assert mio.load_matrix(path).dtype == np.int8
    back = mio.load_quantized(path)
    assert np.array_equal(back.values, qt.values)
    assert np.array_equal(back.channel_bits, qt.channel_bits)
    assert np.array_equal(back.scales, qt.scales)
    assert np.array_equal(back.permutation, qt.permutation)
    assert back.bit_combo == qt.bit_combo


def test_freqs_roundtrip(tmp_path):
    f = np.array([5, 0, 3, 1])
    mio.write_freqs(tmp_path / "f.txt", f)
    assert mio.read_freqs(tmp_path / "f.txt").tolist() == f.tolist()
    (tmp_path / "g.txt").write_text("# comment\n2 7\n\n0 1  # inline\n")
    assert mio.read_freqs(tmp_path / "g.txt", 4).tolist() == [1, 0, 7, 0]


@pytest.mark.parametrize("text", ["1 2\n1 3\n", "1\n", "-1 4\n", "0 -4\n", "9 1\n"])
def test_freqs_errors(tmp_path, text):
    (tmp_path / "f.txt").write_text(text)
    with pytest.raises(ValueError):
        mio.read_freqs(tmp_path / "f.txt", 5)
