"""
Composite differentiable functions built on the tensor tape.

These are fused operations with hand-written backward rules: row softmax,
layer normalization, GELU and masked cross-entropy. Cosine similarity lives
here too, but it returns a plain float because the Bridge only uses it to
make keep/drop decisions.
"""
from typing import Sequence, Union
import logging
import math

import numpy as np

from panther_toy.engine.tensor import Tensor, make_result
from panther_toy.errors import DimensionError, TargetIndexError


logger = logging.getLogger(__name__)

COSINE_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


def softmax_rows(x: Tensor) -> Tensor:
    """
    Softmax along the last axis, stabilized by subtracting the row maximum.

    Args:
        x: Tensor of any rank; each row along the last axis is normalized.

    Returns:
        Tensor of the same shape whose rows are nonnegative and sum to 1.
    """
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return make_result(y, (x,), "softmax", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Normalize each row to zero mean and unit variance, then apply gain and bias.

    Args:
        x: Tensor[..., d].
        gain: Tensor[d].
        bias: Tensor[d].
        eps: Added to the variance; must be positive.

    Returns:
        Tensor with the same shape as ``x``.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm affine parameters must match the row width",
                             x.shape, gain.shape, bias.shape)
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    reduce_axes = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std * (dxhat
                        - np.mean(dxhat, axis=-1, keepdims=True)
                        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
        dgain = np.sum(g * xhat, axis=reduce_axes)
        dbias = np.sum(g, axis=reduce_axes)
        return dx, dgain, dbias

    return make_result(out, (x, gain, bias), "layer_norm", backward)


def gelu(x: Tensor) -> Tensor:
    """GELU activation, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return make_result(out, (x,), "gelu", backward)


def cosine_similarity(u: Union[Tensor, np.ndarray, Sequence[float]],
                      v: Union[Tensor, np.ndarray, Sequence[float]],
                      eps: float = COSINE_EPS) -> float:
    """
    Cosine of the angle between two vectors.

    A vector whose norm is below ``eps`` has similarity 0 with anything, so a
    degenerate embedding is never treated as redundant. The result is clamped
    to [-1, 1].

    Raises:
        DimensionError: If the vectors have different lengths.
    """
    a = np.ravel(u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64))
    b = np.ravel(v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError("cosine_similarity length mismatch", a.shape, b.shape)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < eps or norm_b < eps:
        return 0.0
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


def cross_entropy_masked(logits: Tensor, targets: Sequence[int], mask: Sequence[bool]) -> Tensor:
    """
    Mean negative log-likelihood over masked-in positions.

    Args:
        logits: Tensor[T, V].
        targets: Target ids, length T; ignored where the mask is False.
        mask: Booleans, length T.

    Returns:
        Scalar tensor. Zero (with a warning) when the mask selects nothing.

    Raises:
        DimensionError: If targets or mask do not have T entries.
        TargetIndexError: If a masked-in target is outside [0, V).
    """
    if logits.ndim != 2:
        raise DimensionError("cross_entropy_masked expects 2-D logits", logits.shape)
    T, V = logits.shape
    targets_arr = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=bool)
    if targets_arr.shape != (T,) or mask_arr.shape != (T,):
        raise DimensionError("targets and mask must have one entry per row",
                             logits.shape, targets_arr.shape, mask_arr.shape)
    rows = np.flatnonzero(mask_arr)
    if rows.size == 0:
        logger.warning("cross_entropy_masked called with an empty mask; returning 0")
        return Tensor(np.zeros((), dtype=logits.dtype))
    picked = targets_arr[rows]
    bad = picked[(picked < 0) | (picked >= V)]
    if bad.size:
        raise TargetIndexError(f"Target id {int(bad[0])} outside vocabulary of size {V}")

    z = logits.data[rows]
    shifted = z - np.max(z, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=-1))
    nll = log_norm - shifted[np.arange(rows.size), picked]
    count = rows.size
    loss = np.asarray(np.sum(nll) / count, dtype=logits.dtype)

    def backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[np.arange(count), picked] -= 1.0
        grad = np.zeros_like(logits.data)
        grad[rows] = probs * (g / count)
        return (grad,)

    return make_result(loss, (logits,), "cross_entropy", backward)
