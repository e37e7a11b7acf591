"""
Test package for panther_toy.
"""
