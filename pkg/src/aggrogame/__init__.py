"""Latent aggregative games: dynamics, stability, learning and structure recovery."""

__version__ = "0.1.0"
