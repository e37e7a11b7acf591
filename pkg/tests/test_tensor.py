"""
Tests for the tensor tape.
"""
import threading
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from panther_toy.engine.gradcheck import grad_check
from panther_toy.engine.tensor import (Tensor, concat, exp, getitem, is_grad_enabled, log, masked_fill, matmul,
                                       mean, no_grad, reshape, set_default_dtype, take_rows, tanh,
                                       tensor_sum, transpose)
from panther_toy.errors import DimensionError, TapeError


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestMatmul(unittest.TestCase):
    """Test cases for matmul."""

    def test_identity(self):
        """Test that the identity leaves a matrix unchanged."""
        x = np.arange(6.0).reshape(2, 3)
        out = matmul(Tensor(np.eye(2)), Tensor(x))
        assert_array_equal(out.data, x)

    def test_hand_arithmetic(self):
        """Test a product computed by hand."""
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_mismatch(self):
        """Test that misaligned shapes raise a dimension error naming both shapes."""
        with self.assertRaises(DimensionError) as ctx:
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        self.assertIn("(2, 3)", str(ctx.exception))

    def test_gradient_against_finite_differences(self):
        """Test matmul gradients for both operands."""
        rng = np.random.default_rng(0)
        a = _leaf(rng, 3, 4)
        b = _leaf(rng, 4, 2)
        self.assertLess(grad_check(lambda x: tensor_sum(matmul(x, b) * matmul(x, b)), a), 1e-6)
        self.assertLess(grad_check(lambda x: tensor_sum(tanh(matmul(a, x))), b), 1e-6)

    def test_batched(self):
        """Test the batched product against numpy."""
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
        assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)


class TestTape(unittest.TestCase):
    """Test cases for backward bookkeeping."""

    def test_backward_twice_is_an_error(self):
        """Test that reusing a consumed graph raises TapeError."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = tensor_sum(x * x)
        y.backward()
        with self.assertRaises(TapeError):
            y.backward()

    def test_non_scalar_needs_seed(self):
        """Test that a multi-element backward without seed raises TapeError."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(TapeError):
            (x * 2.0).backward()

    def test_shared_subexpression_accumulates(self):
        """Test that a tensor used twice receives the sum of both gradients."""
        x = Tensor([3.0], requires_grad=True)
        y = x * x + x
        tensor_sum(y).backward()
        assert_allclose(x.grad, [7.0])

    def test_no_grad_records_nothing(self):
        """Test that operations under no_grad do not join the tape."""
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        self.assertFalse(y.requires_grad)
        self.assertIsNone(y.node)

    def test_no_grad_is_per_thread(self):
        """Test that one thread's no_grad leaves recording on in another thread."""
        inside = threading.Event()
        release = threading.Event()
        seen = {}

        def quiet():
            with no_grad():
                seen["quiet"] = is_grad_enabled()
                inside.set()
                release.wait(5)

        def recording():
            inside.wait(5)
            x = Tensor([1.0, 2.0], requires_grad=True)
            seen["recording"] = tensor_sum(x * x).requires_grad
            release.set()

        threads = [threading.Thread(target=quiet), threading.Thread(target=recording)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(10)
        self.assertEqual(seen, {"quiet": False, "recording": True})
        self.assertTrue(is_grad_enabled())

    def test_default_dtype_is_per_thread(self):
        """Test that a dtype set in one thread does not leak into another."""
        seen = []
        set_default_dtype(np.float32)
        try:
            worker = threading.Thread(target=lambda: seen.append(Tensor([1.0]).dtype))
            worker.start()
            worker.join(10)
            self.assertEqual(Tensor([1.0]).dtype, np.float32)
        finally:
            set_default_dtype(np.float64)
        self.assertEqual(seen, [np.float64])

    def test_linearity(self):
        """Test that grad(a f + b g) equals a grad f + b grad g."""
        rng = np.random.default_rng(2)
        data = rng.standard_normal((3, 3))
        a, b = 1.7, -0.4

        def f(x):
            return tensor_sum(tanh(matmul(x, x)))

        def g(x):
            return mean(exp(x * 0.3))

        grads = []
        for fn in (f, g, lambda x: f(x) * a + g(x) * b):
            x = Tensor(data, requires_grad=True)
            fn(x).backward()
            grads.append(x.grad)
        assert_allclose(grads[2], a * grads[0] + b * grads[1], rtol=1e-12, atol=1e-12)

    def test_deterministic(self):
        """Test that identical inputs give bit-identical gradients."""
        results = []
        for _ in range(2):
            x = Tensor(np.linspace(-1, 1, 6).reshape(2, 3), requires_grad=True)
            tensor_sum(tanh(matmul(x, transpose(x)))).backward()
            results.append(x.grad.copy())
        assert_array_equal(results[0], results[1])


class TestShapeOps(unittest.TestCase):
    """Test cases for indexing, reshaping and concatenation."""

    def test_concat_gradient(self):
        """Test that concat splits gradients back to each input."""
        rng = np.random.default_rng(3)
        a, b = _leaf(rng, 2, 3), _leaf(rng, 1, 3)
        self.assertLess(grad_check(lambda x: tensor_sum(tanh(concat([x, b]))), a), 1e-6)

    def test_concat_skips_none(self):
        """Test that None entries are ignored."""
        out = concat([None, Tensor(np.ones((1, 2))), None])
        self.assertEqual(out.shape, (1, 2))

    def test_concat_mismatch(self):
        """Test that differing widths raise a dimension error."""
        with self.assertRaises(DimensionError):
            concat([Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3)))])

    def test_getitem_and_take_rows_gradients(self):
        """Test the scatter-back gradients of slicing and row gathers."""
        rng = np.random.default_rng(4)
        x = _leaf(rng, 4, 3)
        self.assertLess(grad_check(lambda t: tensor_sum(tanh(getitem(t, slice(1, 3)))), x), 1e-6)
        self.assertLess(grad_check(lambda t: tensor_sum(tanh(take_rows(t, [3, 0, 3]))), x), 1e-6)

    def test_reshape_transpose_gradients(self):
        """Test gradients through reshape and transpose."""
        rng = np.random.default_rng(5)
        x = _leaf(rng, 2, 6)
        fn = lambda t: tensor_sum(tanh(transpose(reshape(t, (3, 4)))) * Tensor(np.arange(12.0).reshape(4, 3)))
        self.assertLess(grad_check(fn, x), 1e-6)

    def test_broadcast_add_gradient(self):
        """Test that a broadcast bias receives the summed gradient."""
        x = Tensor(np.ones((3, 2)))
        bias = Tensor(np.zeros(2), requires_grad=True)
        tensor_sum(x + bias).backward()
        assert_array_equal(bias.grad, [3.0, 3.0])

    def test_masked_fill_blocks_gradient(self):
        """Test that filled entries receive no gradient."""
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        mask = np.array([[True, False], [False, True]])
        out = masked_fill(x, mask, -1e9)
        self.assertEqual(out.data[0, 0], -1e9)
        tensor_sum(out).backward()
        assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_log_exp_gradients(self):
        """Test elementwise log and exp rules."""
        x = Tensor(np.array([0.5, 1.5, 2.0]), requires_grad=True)
        self.assertLess(grad_check(lambda t: tensor_sum(log(t) * exp(t * 0.5)), x), 1e-8)


if __name__ == '__main__':
    unittest.main()
