"""Unsupervised two-image fusion with an untrained encoder-decoder prior."""

__version__ = "0.1.0"
