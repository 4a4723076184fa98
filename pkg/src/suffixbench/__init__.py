"""Benchmark of sequential deep-learning models for process suffix prediction."""

__version__ = "0.1.0"
