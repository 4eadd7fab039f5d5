"""Neural dependency parsing with ADMM inference over high-order factor graphs."""

__version__ = "0.1.0"

__all__ = ["__version__"]
