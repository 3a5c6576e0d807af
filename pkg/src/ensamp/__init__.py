"""Ensemble adaptive sampling on a local pilot executor."""

__version__ = "0.1.0"
