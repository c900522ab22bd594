"""Probability of violation of local realism under random measurements."""

__version__ = "0.1.0"
