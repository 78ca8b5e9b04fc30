"""Container roundtrips for the VPC1 tensor format."""

from __future__ import annotations

import io

import numpy as np
import pytest

from vidpipe.errors import ConfigurationError
from vidpipe.tensorio import read_vpc1, write_vpc1


@pytest.mark.parametrize("dtype", [np.uint8, np.float32, np.int64, np.uint16])
def test_roundtrip_dtypes(dtype):
    rng = np.random.default_rng(3)
    arr = (rng.random((2, 3, 4, 5)) * 100).astype(dtype)
    buf = io.BytesIO()
    write_vpc1(buf, arr)
    buf.seek(0)
    out = read_vpc1(buf)
    assert out.dtype == arr.dtype
    assert np.array_equal(out, arr)


def test_roundtrip_low_rank():
    arr = np.arange(7, dtype=np.int64)
    buf = io.BytesIO()
    write_vpc1(buf, arr)
    buf.seek(0)
    out = read_vpc1(buf)
    # dims pad with 1 on write; rank is not recovered beyond trailing ones
    assert out.size == 7
    assert np.array_equal(out.reshape(-1), arr)


def test_file_roundtrip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 255, (4, 3, 8, 8),
                                            dtype=np.uint8)
    p = tmp_path / "clip.vpc1"
    with open(p, "wb") as fh:
        write_vpc1(fh, arr)
    with open(p, "rb") as fh:
        out = read_vpc1(fh)
    assert np.array_equal(out, arr)


def test_bad_magic():
    buf = io.BytesIO(b"XXXX" + b"\x00" * 30)
    with pytest.raises(ConfigurationError):
        read_vpc1(buf)


def test_truncated_payload():
    arr = np.zeros((2, 2, 2, 2), dtype=np.float32)
    buf = io.BytesIO()
    write_vpc1(buf, arr)
    data = buf.getvalue()[:-5]
    with pytest.raises(ConfigurationError):
        read_vpc1(io.BytesIO(data))


def test_unknown_dtype_rejected():
    buf = io.BytesIO()
    with pytest.raises(ConfigurationError):
        write_vpc1(buf, np.zeros((2, 2), dtype=np.float64))
