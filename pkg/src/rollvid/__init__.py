"""Rolling-queue latent video synthesis with spectral tail blending,
subject-aware cross-frame attention, and feature-bank guidance."""

__version__ = "0.1.0"

from .errors import RollvidError

__all__ = ["RollvidError", "__version__"]
