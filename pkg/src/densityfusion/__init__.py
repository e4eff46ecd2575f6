"""Density-informed multimodal breast-screening decision engine."""

__version__ = "0.1.0"
