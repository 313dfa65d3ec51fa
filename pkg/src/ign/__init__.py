"""Idempotent generative networks: a model f trained so that f(f(z)) = f(z) and
real data are its fixed points, turning f into a one-step projector onto the data
manifold."""

__version__ = "0.1.0"
