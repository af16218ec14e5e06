"""Knowledge-aware recommender with dual-side attribute enhancement."""

__version__ = "0.1.0"

from .model import AblationFlags, Hyperparameters, KdarModel, build_model  # noqa: F401
