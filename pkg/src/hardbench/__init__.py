"""Numerical lab for low-resource learning: teacher-student perceptron
simulations, saddle-point theory, MMD shift measurement, difficulty scoring,
and hard-example benchmark construction."""

__version__ = "0.1.0"
