"""
Tests for dataset files and checkpoint directories.
"""
import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from panther_toy.config import RunConfig
from panther_toy.data.synthetic import build_vocab, gen_dataset
from panther_toy.errors import DatasetParseError
from panther_toy.storage.checkpoint_storage import CheckpointStorage
from panther_toy.storage.dataset_storage import load_dataset, save_dataset


class TestDatasetStorage(unittest.TestCase):
    """Test cases for dataset files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, "data", "train.jsonl")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_round_trip(self):
        """Test that 100 conversations survive a save and load bit for bit."""
        dataset = gen_dataset(100, (1, 4), seed=9)
        save_dataset(self.path, dataset)
        loaded = load_dataset(self.path)
        self.assertEqual(len(loaded), 100)
        for a, b in zip(dataset, loaded):
            self.assertEqual(a.id, b.id)
            self.assertEqual(a.turns, b.turns)
            self.assertEqual(a.image.patch_size, b.image.patch_size)
            assert_array_equal(a.image.pixels, b.image.pixels)

    def test_truncated_line(self):
        """Test that a broken record is reported with its line number."""
        save_dataset(self.path, gen_dataset(3, (1, 2), seed=0))
        with open(self.path, "r", encoding="utf-8") as f:
            lines = f.readlines()
        lines[1] = lines[1][: len(lines[1]) // 2] + "\n"
        with open(self.path, "w", encoding="utf-8") as f:
            f.writelines(lines)
        with self.assertRaises(DatasetParseError) as ctx:
            load_dataset(self.path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_missing_field(self):
        """Test that a record without turns is rejected."""
        save_dataset(self.path, gen_dataset(1, (1, 1), seed=0))
        with open(self.path, "r", encoding="utf-8") as f:
            line = f.read().replace('"turns": [', '"turnz": [')
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(line)
        with self.assertRaises(DatasetParseError):
            load_dataset(self.path)

    def test_empty_file(self):
        """Test that an empty file is an empty dataset."""
        save_dataset(self.path, [])
        self.assertEqual(load_dataset(self.path), [])


class TestCheckpointStorage(unittest.TestCase):
    """Test cases for CheckpointStorage."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.storage = CheckpointStorage(os.path.join(self.test_dir, "ckpt"))

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_save_and_load(self):
        """Test that tensors come back rounded to f32 and config and vocab are kept."""
        rng = np.random.default_rng(0)
        state = {"connector.mlp.fc1.weight": rng.standard_normal((3, 4)),
                 "decoder.norm.gain": rng.standard_normal(4)}
        config = RunConfig(seed=11, tau=0.9)
        vocab = build_vocab()
        self.assertFalse(self.storage.exists())
        self.assertTrue(self.storage.save(state, config, vocab))
        self.assertTrue(self.storage.exists())

        loaded = self.storage.load_state()
        self.assertEqual(list(loaded), list(state))
        for name, value in state.items():
            assert_array_equal(loaded[name], value.astype(np.float32).astype(np.float64))
        self.assertEqual(self.storage.load_config({}), config)
        self.assertEqual(self.storage.load_vocab(), vocab)

    def test_manifest(self):
        """Test manifest names and shapes."""
        self.storage.save({"a.b": np.zeros((2, 5))}, RunConfig(), build_vocab())
        self.assertEqual(self.storage.read_manifest(), [("a.b", (2, 5))])

    def test_save_failure_returns_false(self):
        """Test that an unwritable location is reported as False."""
        blocker = os.path.join(self.test_dir, "file")
        with open(blocker, "w") as f:
            f.write("x")
        storage = CheckpointStorage(os.path.join(blocker, "ckpt"))
        with self.assertLogs('panther_toy.storage.checkpoint_storage', level='ERROR'):
            self.assertFalse(storage.save({"a": np.zeros(1)}, RunConfig(), build_vocab()))


if __name__ == '__main__':
    unittest.main()
