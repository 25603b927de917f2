"""Airway and artery-vein segmentation of chest CT."""

from ._tubule import *  # noqa: F401,F403
from ._tubule import DataError, NumericError

__all__ = [name for name in dir() if not name.startswith("_")]
