import struct

import numpy as np
import pytest

from hosvdkit.classifier import load_model, save_model, train_vector_mode
from hosvdkit.errors import (
    BadMagicError,
    ChecksumMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from hosvdkit.serialize import ByteReader, ByteWriter


@pytest.fixture()
def model_file(tmp_path):
    rng = np.random.default_rng(11)
    feats = rng.standard_normal((6, 10))
    m = train_vector_mode(feats, [0] * 5 + [1] * 5, rank=2)
    p = tmp_path / "model.hsvd"
    save_model(m, p)
    return p


def test_writer_reader_roundtrip_primitives():
    w = ByteWriter(b"TEST")
    w.u8(7)
    w.u32(123456)
    w.u64(2**40 + 5)
    arr = np.arange(6.0).reshape(2, 3)
    w.f64_block(arr)
    data = w.finish()

    r = ByteReader(data, b"TEST")
    assert r.u8() == 7
    assert r.u32() == 123456
    assert r.u64() == 2**40 + 5
    assert np.array_equal(r.f64_block().reshape(2, 3), arr)
    r.finish()


def test_bad_magic_is_distinct(model_file):
    data = b"XXXX" + model_file.read_bytes()[4:]
    broken = model_file.with_name("bad_magic.hsvd")
    broken.write_bytes(data)
    with pytest.raises(BadMagicError):
        load_model(broken)


def test_unsupported_version_is_distinct(model_file):
    data = bytearray(model_file.read_bytes())
    data[4:8] = struct.pack("<I", 255)
    broken = model_file.with_name("bad_version.hsvd")
    broken.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersionError):
        load_model(broken)


def test_truncated_file_is_distinct(model_file):
    data = model_file.read_bytes()
    broken = model_file.with_name("truncated.hsvd")
    broken.write_bytes(data[: len(data) - 10])
    with pytest.raises(TruncatedFileError):
        load_model(broken)


def test_checksum_mismatch_is_distinct(model_file):
    data = bytearray(model_file.read_bytes())
    data[-20] ^= 0x01  # flip one payload bit
    broken = model_file.with_name("bitflip.hsvd")
    broken.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatchError):
        load_model(broken)


def test_trailing_garbage_rejected(model_file):
    broken = model_file.with_name("garbage.hsvd")
    broken.write_bytes(model_file.read_bytes() + b"\x00\x01")
    with pytest.raises(ChecksumMismatchError):
        load_model(broken)


def test_empty_file_reports_truncation(model_file):
    broken = model_file.with_name("empty.hsvd")
    broken.write_bytes(b"")
    with pytest.raises(TruncatedFileError):
        load_model(broken)
