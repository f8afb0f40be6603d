"""Weakly supervised representation learning for instance-level product retrieval."""

__version__ = "1.0.0"
