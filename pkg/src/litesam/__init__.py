"""Desk-scale Lite-SAM: LiteViT backbone, AutoPPN proposals and a promptable mask decoder."""
from .config import ModelConfig, RunConfig

__version__ = "0.1.0"

__all__ = ["ModelConfig", "RunConfig", "__version__"]
