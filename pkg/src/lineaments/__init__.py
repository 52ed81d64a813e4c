"""Geological lineament extraction from multiband rasters."""

__version__ = "0.1.0"

from .raster import GeoRef, MultibandRaster, PointSet  # noqa: E402
from .vectorize import ExtractionParams, Lineament, LineamentSet  # noqa: E402
from .pipeline import PipelineConfig, StageError, run_pipeline  # noqa: E402

__all__ = ["GeoRef", "MultibandRaster", "PointSet", "ExtractionParams", "Lineament",
           "LineamentSet", "PipelineConfig", "StageError", "run_pipeline", "__version__"]
