"""
Finite-difference gradient checking.

Analytic gradients from the tape are compared with central differences
(f(x+h) - f(x-h)) / 2h. Relative error uses the denominator
max(|analytic|, |numeric|, floor).
"""
from typing import Callable, Optional, Sequence
import logging

import numpy as np

from panther_toy.engine.tensor import Tensor, no_grad
from panther_toy.errors import ConfigurationError


logger = logging.getLogger(__name__)

ScalarFn = Callable[[Tensor], Tensor]


def _require_double(x: Tensor):
    if x.dtype != np.float64:
        raise ConfigurationError(
            f"Gradient checking requires float64 tensors, got {x.dtype}; "
            "finite-difference tolerances are meaningless in single precision"
        )


def _analytic_gradient(f: ScalarFn, x: Tensor) -> np.ndarray:
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ValueError(f"Gradient check needs a scalar function, got shape {out.shape}")
    if out.requires_grad:
        out.backward()
    return x.grad_or_zeros().copy()


def _evaluate(f: ScalarFn, x: Tensor) -> float:
    with no_grad():
        return f(x).item()


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """Relative error with denominator max(|analytic|, |numeric|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def largest_entries(grad: np.ndarray, count: int) -> np.ndarray:
    """Flat indices of the ``count`` largest-magnitude gradient entries."""
    flat = np.abs(grad).ravel()
    count = min(count, flat.size)
    return np.argsort(-flat, kind="stable")[:count]


def grad_check(f: ScalarFn, x: Tensor, h: float = 1e-5,
               indices: Optional[Sequence[int]] = None, floor: float = 1e-8) -> float:
    """
    Compare tape gradients against central differences, entry by entry.

    Args:
        f: Scalar-valued function of ``x`` built from tape operations.
        x: Leaf tensor with ``requires_grad=True``; perturbed in place and restored.
        h: Finite-difference step, must be positive.
        indices: Flat indices to check; all entries when None.
        floor: Lower bound on the relative-error denominator.

    Returns:
        The worst relative error over the checked entries.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _require_double(x)
    analytic = _analytic_gradient(f, x)
    checked = range(x.size) if indices is None else indices
    flat = x.data.reshape(-1)
    worst = 0.0
    for i in checked:
        original = flat[i]
        flat[i] = original + h
        f_plus = _evaluate(f, x)
        flat[i] = original - h
        f_minus = _evaluate(f, x)
        flat[i] = original
        numeric = (f_plus - f_minus) / (2.0 * h)
        err = relative_error(float(analytic.reshape(-1)[i]), numeric, floor)
        worst = max(worst, err)
    logger.debug(f"grad_check over {len(checked)} entries of {x.name or 'tensor'}: {worst:.3e}")
    return worst


def directional_grad_check(f: ScalarFn, x: Tensor, h: float = 1e-5,
                           seed: int = 0, floor: float = 1e-8) -> float:
    """
    Compare the directional derivative along a random unit direction.

    Checks every entry of the gradient at once: the analytic value is the dot
    product of the tape gradient with the direction.

    Returns:
        Relative error of the directional derivative.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _require_double(x)
    analytic = _analytic_gradient(f, x)
    direction = np.random.default_rng(seed).standard_normal(x.shape)
    direction /= np.linalg.norm(direction)
    original = x.data.copy()
    x.data[...] = original + h * direction
    f_plus = _evaluate(f, x)
    x.data[...] = original - h * direction
    f_minus = _evaluate(f, x)
    x.data[...] = original
    numeric = (f_plus - f_minus) / (2.0 * h)
    return relative_error(float(np.sum(analytic * direction)), numeric, floor)
