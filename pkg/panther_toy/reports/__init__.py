"""
Reports module for panther_toy.

This module writes experiment outputs:
- Training loss logs and frozen-parameter audits
- Pruning reports and retained index lists
- Attention maps
"""
