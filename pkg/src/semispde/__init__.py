"""Semidiscrete stochastic parabolic equations on the unit cube."""

__version__ = "0.1.0"
