"""Prediction-based Newton-Raphson consensus for kinematic bicycles with an integral-CBF safety filter."""

__version__ = "1.0.0"
