"""Adaptive-threshold asynchronous delta modulation with a volatile-memristor feedback loop."""

__version__ = "0.1.0"
