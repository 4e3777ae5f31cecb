"""Conditional information gain (CIG) intrinsic rewards."""

__version__ = "0.1.0"
