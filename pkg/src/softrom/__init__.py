"""Reduced-order modeling and real-time optimal control for soft-body plants."""

__version__ = "0.1.0"
