"""Numerical laboratory for stochastic localization and thin-shell constants."""

__version__ = "0.1.0"
