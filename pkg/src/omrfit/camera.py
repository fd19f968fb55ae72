"""Weak-perspective camera: drop depth, scale, translate.

Image coordinates are normalized to [-1, 1]^2 with x to the right and y up;
pixel (0, 0) of a raster sits at the top-left corner (y near +1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CameraError, DimensionError


@dataclass
class CameraParams:
    scale: float = 1.0
    trans: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.scale = float(self.scale)
        self.trans = np.asarray(self.trans, dtype=np.float64).ravel()
        if self.trans.size != 2:
            raise CameraError(f"camera translation must have 2 entries, got {self.trans.size}")
        if self.scale <= 0:
            raise CameraError(f"camera scale must be positive, got {self.scale}")


def project(points, camera):
    """Project (M, 3) body-frame points to (M, 2) image coordinates.

    x = scale * p[:, :2] + trans. Depth order is preserved separately by the
    caller (the rasterizer consumes raw z for its depth test).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DimensionError(f"points must be (M, 3), got {points.shape}")
    if camera.scale <= 0:
        raise CameraError(f"camera scale must be positive, got {camera.scale}")
    return camera.scale * points[:, :2] + camera.trans
