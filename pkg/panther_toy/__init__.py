"""
panther_toy - A desk-scale instruction-prompted vision encoder, multi-turn
visual-token pruning bridge and interleaved decoder training pipeline.
"""

__version__ = '0.1.0'
