"""Unsupervised translation of basic blocks between instruction-set architectures."""

__version__ = "0.1.0"
