"""Machine-learning SET current models for circuit-level simulation."""

__version__ = "0.1.0"
