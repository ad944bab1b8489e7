"""Predicational aspect classification with composed distributional vectors."""

from predaspect.errors import AspectError

__version__ = "0.1.0"

__all__ = ["AspectError", "__version__"]
