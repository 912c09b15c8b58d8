"""Proactive tamper localisation by blanking a segmentation model's view."""

from .config import AttackConfig, DetectConfig, PromptSpec

__version__ = "0.1.0"

__all__ = ["AttackConfig", "DetectConfig", "PromptSpec", "__version__"]
