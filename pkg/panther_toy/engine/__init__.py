"""
Engine module for panther_toy.

This module contains the numeric core shared by every other module:
- Dense tensors with a reverse-mode autodiff tape
- Fused softmax, layer norm, GELU and masked cross-entropy
- Finite-difference gradient checking
- Tensor dump file format
"""
