"""Locally differentially private distributed stochastic aggregative
optimization: simulator, baselines, and privacy accountant."""

__version__ = "0.1.0"
