"""Realized-CARE: joint expectile and realized-measure models for tail risk."""

__version__ = "0.1.0"
