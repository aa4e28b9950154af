"""Aerial point-cloud tiles, density-controlled sampling and hierarchical IoU evaluation."""

from aerialseg.errors import AerialSegError
from aerialseg.taxonomy import EVAL_CLASSES, SensorKind, UnifiedClass

__version__ = "0.1.0"

__all__ = [
    "AerialSegError",
    "EVAL_CLASSES",
    "SensorKind",
    "UnifiedClass",
    "__version__",
]
