"""Dual-scale memory-guided navigation in a synthetic 2-D world."""

__version__ = "0.1.0"
