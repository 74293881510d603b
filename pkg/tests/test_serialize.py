import io

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from prototex.errors import CheckpointCorruptError
from prototex.serialize import DocReader, write_array, write_kv_block


def roundtrip_array(arr):
    buf = io.StringIO()
    write_array(buf, "a", arr)
    buf.seek(0)
    name, out = DocReader(buf).read_array("a")
    return out


class TestKvBlock:
    def test_roundtrip(self):
        buf = io.StringIO()
        write_kv_block(buf, "config", {"lr": 3e-5, "m": 20, "normalize": True, "tag": "x"})
        buf.seek(0)
        got = DocReader(buf).read_kv_block("config")
        assert got == {"lr": 3e-5, "m": 20, "normalize": True, "tag": "x"}

    def test_wrong_name_rejected(self):
        buf = io.StringIO()
        write_kv_block(buf, "config", {"a": 1})
        buf.seek(0)
        with pytest.raises(CheckpointCorruptError):
            DocReader(buf).read_kv_block("other")


class TestArray:
    def test_float_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        arr = rng.normal(size=(4, 3)) * np.logspace(-200, 200, 12).reshape(4, 3)
        arr[0, 0] = 0.1
        arr[0, 1] = -0.0
        out = roundtrip_array(arr)
        assert_array_equal(out, arr)
        assert np.signbit(out[0, 1])

    def test_int_roundtrip(self):
        out = roundtrip_array(np.array([[1, -2, 3]], dtype=np.int64))
        assert_array_equal(out, [[1, -2, 3]])
        assert out.dtype == np.int64

    def test_one_dimensional_written_as_single_row(self):
        out = roundtrip_array(np.array([1.5, 2.5]))
        assert out.shape == (1, 2)

    def test_truncated_rows_rejected(self):
        buf = io.StringIO("array a float 2 3\n1 2 3\n")
        with pytest.raises(CheckpointCorruptError):
            DocReader(buf).read_array("a")

    def test_short_row_rejected(self):
        buf = io.StringIO("array a float 1 3\n1 2\n")
        with pytest.raises(CheckpointCorruptError):
            DocReader(buf).read_array("a")

    def test_garbage_number_rejected(self):
        buf = io.StringIO("array a float 1 2\n1 zap\n")
        with pytest.raises(CheckpointCorruptError):
            DocReader(buf).read_array("a")
