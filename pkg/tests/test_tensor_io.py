"""
Tests for tensor dump files.
"""
import os
import struct
import tempfile
import unittest

import numpy as np

from panther_toy.engine.tensor import Tensor
from panther_toy.engine.tensor_io import MAGIC, read_tensor, write_tensor
from panther_toy.errors import TensorFormatError


class TestTensorIO(unittest.TestCase):
    """Test cases for write_tensor and read_tensor."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "t.pthr")

    def tearDown(self):
        self.tmp.cleanup()

    def test_layout(self):
        """Test the header and little-endian float32 payload."""
        write_tensor(self.path, np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        with open(self.path, "rb") as f:
            blob = f.read()
        self.assertEqual(blob[:5], MAGIC)
        self.assertEqual(struct.unpack_from("<3I", blob, 5), (2, 2, 3))
        self.assertEqual(len(blob), 5 + 12 + 6 * 4)
        self.assertEqual(struct.unpack_from("<f", blob, 17)[0], 1.0)

    def test_values_survive_as_float32(self):
        """Test that values come back rounded to float32."""
        values = np.random.default_rng(0).standard_normal((3, 4))
        write_tensor(self.path, Tensor(values))
        loaded = read_tensor(self.path)
        self.assertEqual(loaded.dtype, np.float32)
        np.testing.assert_array_equal(loaded, values.astype(np.float32))

    def test_bad_magic(self):
        """Test that a foreign file is rejected."""
        with open(self.path, "wb") as f:
            f.write(b"NOPE!" + b"\x00" * 8)
        with self.assertRaises(TensorFormatError):
            read_tensor(self.path)

    def test_truncated_payload(self):
        """Test that a short payload is rejected."""
        write_tensor(self.path, np.ones((2, 2)))
        with open(self.path, "rb") as f:
            blob = f.read()
        with open(self.path, "wb") as f:
            f.write(blob[:-3])
        with self.assertRaises(TensorFormatError):
            read_tensor(self.path)


if __name__ == '__main__':
    unittest.main()
