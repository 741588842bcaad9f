"""Causal link discovery among disaster-tweet events on windowed spatio-temporal graphs."""

__version__ = "0.1.0"
