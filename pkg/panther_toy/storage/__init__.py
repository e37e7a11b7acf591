"""
Storage module for panther_toy.

This module handles data persistence:
- Conversation datasets (JSON lines)
- Model checkpoints (named tensor dumps with a manifest)
"""
