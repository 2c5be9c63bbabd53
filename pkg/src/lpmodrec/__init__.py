"""Modulation recognition from imperfect spectrum scans using local I/Q
patterns (shingle Fisher Vectors) alongside global cumulant and
order-statistic features."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
