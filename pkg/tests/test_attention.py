"""
Tests for multi-head attention and the transformer block.
"""
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from panther_toy.engine.gradcheck import grad_check
from panther_toy.engine.tensor import Tensor, tensor_sum
from panther_toy.errors import ConfigurationError, DimensionError
from panther_toy.model.attention import MultiHeadAttention, TransformerBlock


class TestMultiHeadAttention(unittest.TestCase):
    """Test cases for MultiHeadAttention."""

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.attn = MultiHeadAttention(8, 2, self.rng, std=0.3)
        self.x = self.rng.standard_normal((5, 8))

    def test_heads_must_divide_width(self):
        """Test that a non-divisible width is rejected."""
        with self.assertRaises(ConfigurationError):
            MultiHeadAttention(6, 4, self.rng)

    def test_probabilities(self):
        """Test the shape and normalization of the attention probabilities."""
        out, probs = self.attn.forward(Tensor(self.x))
        self.assertEqual(out.shape, (5, 8))
        self.assertEqual(probs.shape, (2, 5, 5))
        assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_causal_mask(self):
        """Test that causal attention puts zero weight on later positions."""
        _, probs = self.attn.forward(Tensor(self.x), causal=True)
        self.assertTrue(np.all(np.triu(probs[0], k=1) == 0.0))

    def test_key_mask(self):
        """Test that a masked key does not influence any output."""
        mask = np.array([True, True, False, True, True])
        base, _ = self.attn.forward(Tensor(self.x), key_mask=mask)
        changed = self.x.copy()
        changed[2] += 5.0
        other, _ = self.attn.forward(Tensor(changed), key_mask=mask)
        keep = [0, 1, 3, 4]
        assert_array_equal(base.data[keep], other.data[keep])

    def test_input_width(self):
        """Test that a wrong input width is rejected."""
        with self.assertRaises(DimensionError):
            self.attn(Tensor(np.ones((3, 4))))


class TestTransformerBlock(unittest.TestCase):
    """Test cases for TransformerBlock."""

    def test_causality_is_exact(self):
        """Test that outputs before t ignore perturbations after t."""
        rng = np.random.default_rng(1)
        block = TransformerBlock(8, 2, rng, std=0.3)
        x = rng.standard_normal((6, 8))
        base = block(Tensor(x), causal=True).data
        for t in range(5):
            perturbed = x.copy()
            perturbed[t + 1:] += rng.standard_normal((5 - t, 8))
            out = block(Tensor(perturbed), causal=True).data
            assert_array_equal(out[:t + 1], base[:t + 1])

    def test_gradient(self):
        """Test block gradients with respect to its input."""
        rng = np.random.default_rng(2)
        block = TransformerBlock(8, 2, rng, std=0.3)
        x = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
        weights = Tensor(rng.standard_normal((5, 8)))
        self.assertLess(grad_check(lambda t: tensor_sum(block(t) * weights), x), 1e-4)


if __name__ == '__main__':
    unittest.main()
