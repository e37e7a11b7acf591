"""
Model module for panther_toy.

This module holds the learnable components:
- Parameter registry and basic layers
- Vision transformer with shared and instruction-aware prompts
- Frozen text encoder and instruction-prompt generator
- Causal decoder with interleaved multi-turn assembly
"""
