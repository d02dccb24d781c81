"""Joint RGB / infrared image pair compression toolkit."""

__version__ = "0.1.0"
