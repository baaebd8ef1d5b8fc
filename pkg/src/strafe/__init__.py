"""Discrete-time survival transformer for longitudinal visit sequences."""

__version__ = "0.1.0"
