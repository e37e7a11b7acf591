"""
Bridge module for panther_toy.

This module prunes redundant later-turn visual tokens:
- Cosine-threshold pruning with spatial-index matching
- Multi-turn recursive pruning and sequence-length accounting
- A deliberately naive reference implementation for cross-checking
"""
