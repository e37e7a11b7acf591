"""
Multi-head self-attention and the pre-norm transformer block.

Both the vision encoder (full attention), the text encoder (full attention
over real tokens) and the decoder (causal attention) use these.
"""
from typing import Optional, Tuple
import logging

import numpy as np

from panther_toy.engine.functional import softmax_rows
from panther_toy.engine.tensor import Tensor, masked_fill, matmul, reshape, transpose
from panther_toy.errors import ConfigurationError, DimensionError
from panther_toy.model.module import MLP, LayerNorm, Linear, Module


logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


class MultiHeadAttention(Module):
    """
    Scaled dot-product self-attention over a single sequence.

    Attributes:
        width (int): Model width d.
        heads (int): Number of heads; must divide ``width``.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator, std: float = 0.02):
        if heads < 1 or width % heads != 0:
            raise ConfigurationError(f"width {width} is not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.query = Linear(width, width, rng, std)
        self.key = Linear(width, width, rng, std)
        self.value = Linear(width, width, rng, std)
        self.output = Linear(width, width, rng, std)

    def forward(self, x: Tensor, causal: bool = False,
                key_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        """
        Attend over the rows of ``x``.

        Args:
            x: Tensor[S, d].
            causal: Block attention from position t to positions after t.
            key_mask: Booleans[S], False marks keys nobody may attend to.

        Returns:
            (output Tensor[S, d], attention probabilities array[heads, S, S]).
        """
        if x.ndim != 2 or x.shape[1] != self.width:
            raise DimensionError("attention input width mismatch", x.shape, (x.shape[0], self.width))
        S = x.shape[0]
        h, dh = self.heads, self.head_dim
        q = transpose(reshape(self.query(x), (S, h, dh)), (1, 0, 2))
        k = transpose(reshape(self.key(x), (S, h, dh)), (1, 2, 0))
        v = transpose(reshape(self.value(x), (S, h, dh)), (1, 0, 2))
        scores = matmul(q, k) * self.scale

        blocked = np.zeros((S, S), dtype=bool)
        if causal:
            blocked |= np.triu(np.ones((S, S), dtype=bool), k=1)
        if key_mask is not None:
            blocked |= ~np.asarray(key_mask, dtype=bool)[None, :]
        if blocked.any():
            scores = masked_fill(scores, blocked[None, :, :], MASK_VALUE)

        probs = softmax_rows(scores)
        mixed = reshape(transpose(matmul(probs, v), (1, 0, 2)), (S, self.width))
        return self.output(mixed), probs.data

    def __call__(self, x: Tensor, causal: bool = False,
                 key_mask: Optional[np.ndarray] = None) -> Tensor:
        return self.forward(x, causal, key_mask)[0]


class TransformerBlock(Module):
    """
    Pre-norm block: ``x + attn(ln1(x))`` followed by ``x + mlp(ln2(x))``.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4, std: float = 0.02):
        self.width = width
        self.ln1 = LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads, rng, std)
        self.ln2 = LayerNorm(width)
        self.mlp = MLP(width, mlp_ratio * width, width, rng, std)

    def forward(self, x: Tensor, causal: bool = False,
                key_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        """Run the block and also return the attention probabilities."""
        attended, probs = self.attn.forward(self.ln1(x), causal, key_mask)
        x = x + attended
        x = x + self.mlp(self.ln2(x))
        return x, probs

    def __call__(self, x: Tensor, causal: bool = False,
                 key_mask: Optional[np.ndarray] = None) -> Tensor:
        return self.forward(x, causal, key_mask)[0]
