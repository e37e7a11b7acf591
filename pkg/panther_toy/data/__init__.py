"""
Data module for panther_toy.

This module generates synthetic multi-turn visual question answering data:
- Colored block-grid images
- Questions whose answers are computed from the pixels
"""
