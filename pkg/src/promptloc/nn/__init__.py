"""Torch modules for the prompt-conditioned localizer."""

from .model import LocalizerNet, ModelConfig

__all__ = ["LocalizerNet", "ModelConfig"]
