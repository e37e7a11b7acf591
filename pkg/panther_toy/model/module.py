"""
Parameter registry and basic layers.

A Module discovers its parameters by walking its attributes in definition
order, so parameter names are stable dotted paths such as
``blocks.0.attn.query.weight``. These names key checkpoints and the
frozen-parameter audit.
"""
from typing import Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np

from panther_toy.engine.functional import gelu, layer_norm
from panther_toy.engine.tensor import Tensor, get_default_dtype, matmul, take_rows
from panther_toy.errors import ConfigurationError, DimensionError


logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A leaf tensor owned by a Module; requires gradients unless frozen."""

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None):
        super().__init__(data, requires_grad=requires_grad, dtype=get_default_dtype(), name=name)


class Module:
    """
    Base class for everything that owns parameters.

    Subclasses assign Parameters, Modules, or lists of either as attributes;
    ``named_parameters`` finds them without explicit registration.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """Yield (dotted name, parameter) pairs in definition order."""
        for attr, value in vars(self).items():
            yield from _walk(f"{prefix}{attr}", value)

    def parameters(self) -> List[Parameter]:
        """Return every parameter in definition order."""
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        """Return the parameters that currently receive gradients."""
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self):
        """Stop gradients from reaching any parameter of this module."""
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self):
        """Let gradients reach every parameter of this module."""
        for p in self.parameters():
            p.requires_grad = True

    @property
    def frozen(self) -> bool:
        """True when no parameter receives gradients."""
        return not any(p.requires_grad for p in self.parameters())

    def zero_grad(self):
        """Clear accumulated gradients."""
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        """Total number of scalar parameters."""
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy every parameter into a name -> array mapping."""
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """
        Overwrite parameter values from a name -> array mapping.

        Args:
            state: Arrays keyed by dotted parameter name.
            strict: Require the key sets to match exactly.

        Raises:
            ConfigurationError: On missing or unexpected keys (strict mode).
            DimensionError: On a shape mismatch.
        """
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise ConfigurationError(
                    f"State mismatch; missing={missing[:5]} unexpected={unexpected[:5]}"
                )
        for name, value in state.items():
            if name not in params:
                continue
            param = params[name]
            if tuple(value.shape) != param.shape:
                raise DimensionError(f"Shape mismatch loading {name}", param.shape, value.shape)
            param.data[...] = value


def _walk(name: str, value) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        if value.name is None:
            value.name = name
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def normal_init(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    """Draw a normal(0, std) array in the default dtype."""
    return (rng.standard_normal(shape) * std).astype(get_default_dtype())


class Linear(Module):
    """
    Affine map ``x @ weight + bias``.

    Attributes:
        weight (Parameter): Shape (in_features, out_features).
        bias (Optional[Parameter]): Shape (out_features,).
    """

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 std: float = 0.02, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(normal_init(rng, (in_features, out_features), std))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError("Linear input width mismatch", x.shape, self.weight.shape)
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    """Layer normalization over the last axis with learnable gain and bias."""

    def __init__(self, width: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(width))
        self.bias = Parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    """Lookup table mapping ids to rows."""

    def __init__(self, count: int, width: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = Parameter(normal_init(rng, (count, width), std))

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.weight.shape[0]):
            raise IndexError(f"Embedding id out of range [0, {self.weight.shape[0]})")
        return take_rows(self.weight, ids)


class MLP(Module):
    """
    Two-layer perceptron: Linear, activation, Linear.

    Attributes:
        activation (str): ``gelu`` or ``linear``.
    """

    ACTIVATIONS = ("gelu", "linear")

    def __init__(self, in_features: int, hidden: int, out_features: int,
                 rng: np.random.Generator, std: float = 0.02, activation: str = "gelu"):
        if activation not in self.ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation {activation!r}; expected one of {self.ACTIVATIONS}")
        self.activation = activation
        self.fc1 = Linear(in_features, hidden, rng, std)
        self.fc2 = Linear(hidden, out_features, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        if self.activation == "gelu":
            h = gelu(h)
        return self.fc2(h)
