"""Composable action-conditioned prediction and planning for 2D navigation."""

__version__ = "0.1.0"
