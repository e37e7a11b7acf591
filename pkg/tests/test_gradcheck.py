"""
Tests for the finite-difference gradient checker.
"""
import unittest

import numpy as np

from panther_toy.engine.gradcheck import (directional_grad_check, grad_check, largest_entries,
                                          relative_error)
from panther_toy.engine.tensor import Tensor, tensor_sum
from panther_toy.errors import ConfigurationError


class TestGradCheck(unittest.TestCase):
    """Test cases for grad_check and friends."""

    def test_quadratic_is_exact(self):
        """Test that sum(x^2) checks to near machine precision."""
        x = Tensor(np.random.default_rng(0).standard_normal(10), requires_grad=True)
        self.assertLess(grad_check(lambda t: tensor_sum(t * t), x, h=1e-5), 1e-9)

    def test_detects_wrong_gradient(self):
        """Test that a broken backward rule is caught."""
        from panther_toy.engine.tensor import make_result

        def bad_square(t):
            return make_result(t.data ** 2, (t,), "bad", lambda g: (g * t.data,))

        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        self.assertGreater(grad_check(lambda t: tensor_sum(bad_square(t)), x), 0.4)

    def test_input_restored(self):
        """Test that the checked tensor is left unchanged."""
        data = np.array([0.3, -0.7, 1.1])
        x = Tensor(data.copy(), requires_grad=True)
        grad_check(lambda t: tensor_sum(t * t * t), x)
        directional_grad_check(lambda t: tensor_sum(t * t * t), x)
        np.testing.assert_array_equal(x.data, data)

    def test_entry_subset(self):
        """Test checking only selected entries."""
        x = Tensor(np.array([1.0, -5.0, 0.1, 3.0]), requires_grad=True)
        largest = largest_entries(2 * x.data, 2)
        self.assertEqual(sorted(largest.tolist()), [1, 3])
        self.assertLess(grad_check(lambda t: tensor_sum(t * t), x, indices=largest), 1e-9)

    def test_directional(self):
        """Test the random-direction check on a smooth function."""
        x = Tensor(np.linspace(-1, 1, 12).reshape(3, 4), requires_grad=True)
        self.assertLess(directional_grad_check(lambda t: tensor_sum(t * t * t), x, seed=3), 1e-7)

    def test_refuses_single_precision(self):
        """Test that float32 inputs are refused."""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with self.assertRaises(ConfigurationError):
            grad_check(lambda t: tensor_sum(t * t), x)

    def test_relative_error_floor(self):
        """Test the denominator max(|a|, |n|, floor)."""
        self.assertEqual(relative_error(0.0, 0.0), 0.0)
        self.assertAlmostEqual(relative_error(1e-10, 0.0), 1e-2)
        self.assertAlmostEqual(relative_error(2.0, 1.0), 0.5)


if __name__ == '__main__':
    unittest.main()
