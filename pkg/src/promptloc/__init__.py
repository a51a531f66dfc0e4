"""Prompt-conditioned selective DoA estimation for two-microphone mixtures."""

__version__ = "0.1.0"
