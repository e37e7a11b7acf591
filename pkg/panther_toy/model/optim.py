"""
Adam optimizer with per-group learning rates.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence
import logging

import numpy as np

from panther_toy.errors import ConfigurationError
from panther_toy.model.module import Parameter


logger = logging.getLogger(__name__)


@dataclass
class ParamGroup:
    """Parameters sharing one learning rate."""
    name: str
    params: List[Parameter]
    lr: float


class Adam:
    """
    Adam with bias correction.

    Only parameters that require gradients and received one are updated;
    frozen parameters are never touched.

    Attributes:
        groups (List[ParamGroup]): Parameter groups.
        step_count (int): Number of completed steps.
    """

    def __init__(self, groups: Sequence[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        seen = set()
        for group in groups:
            if group.lr <= 0:
                raise ConfigurationError(f"Learning rate for group {group.name} must be positive")
            for p in group.params:
                if id(p) in seen:
                    raise ConfigurationError(f"Parameter {p.name} appears in more than one group")
                seen.add(id(p))
        self.groups = list(groups)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def zero_grad(self):
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def step(self):
        """Apply one update from the accumulated gradients."""
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for group in self.groups:
            for p in group.params:
                if not p.requires_grad or p.grad is None:
                    continue
                g = p.grad
                if self.weight_decay:
                    p.data -= group.lr * self.weight_decay * p.data
                m = self._m.setdefault(id(p), np.zeros_like(p.data))
                v = self._v.setdefault(id(p), np.zeros_like(p.data))
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.data -= group.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
