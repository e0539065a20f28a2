"""Fuzzy H-infinity filter synthesis for T-S systems with time-varying delay."""

__version__ = "0.1.0"
