"""Hardness-aware complex query answering benchmarks over knowledge graphs."""

__version__ = "0.1.0"
