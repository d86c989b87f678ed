"""Jointly amortized sequential experimental design and posterior inference."""

__version__ = "0.1.0"
