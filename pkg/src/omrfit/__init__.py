"""Desk-scale human mesh recovery.

A toy parametric body model, a weak-perspective camera, a differentiable
six-part silhouette rasterizer, robust fitting losses, and alternating
regressor/mesh optimization, small enough that the full bias/overfitting
benchmark pipeline runs on a laptop in minutes.
"""

__version__ = "0.1.0"

from .body_model import (
    BodyModel,
    MeshParams,
    forward,
    load_model,
    make_toy_model,
    save_model,
    tpose_vertices,
)
from .camera import CameraParams, project
from .errors import (
    CameraError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    IoError,
    MetricError,
    NumericsError,
    OmrfitError,
    ScheduleError,
)

__all__ = [
    "__version__",
    "BodyModel",
    "MeshParams",
    "CameraParams",
    "forward",
    "project",
    "make_toy_model",
    "save_model",
    "load_model",
    "tpose_vertices",
    "OmrfitError",
    "ConfigError",
    "DimensionError",
    "ScheduleError",
    "CameraError",
    "DataError",
    "IoError",
    "MetricError",
    "FormatError",
    "NumericsError",
]
