"""Differentiable six-part silhouette rasterizer.

Soft mode follows the soft-rasterizer recipe: each face contributes
``D_j(p) = sigmoid(gamma * sgn(p) * d^2(p, face j))`` (sgn = +1 inside the
face, -1 outside), and the channel of part i aggregates its faces as
``S_i(p) = 1 - prod_j (1 - D_j(p))``. Hard mode is a plain z-buffer over
pixel centers producing a part-label image.

Two kernel implementations share one contract: a Cython extension
(``_cykernels``, used when built) and a numpy fallback (``_npkernels``).
``OMRFIT_KERNEL=numpy|cython`` overrides the import-time choice and
:func:`set_kernel` switches at runtime (the benchmark script times both).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, DimensionError, NumericsError
from . import _npkernels
from .io import (
    load_labels,
    load_soft_stack,
    read_pgm,
    save_labels,
    save_soft_stack,
    write_pgm,
)

_IMPL = _npkernels
_KERNEL_NAME = "numpy"
if os.environ.get("OMRFIT_KERNEL", "cython") != "numpy":
    try:
        from . import _cykernels

        _IMPL = _cykernels
        _KERNEL_NAME = "cython"
    except ImportError:
        if os.environ.get("OMRFIT_KERNEL") == "cython":
            raise ConfigError("OMRFIT_KERNEL=cython but the extension is not built") from None

N_PARTS = 6


def active_kernel():
    """Name of the kernel backend currently in use ('cython' or 'numpy')."""
    return _KERNEL_NAME


def set_kernel(name):
    """Switch kernel backend at runtime; raises ConfigError if unavailable."""
    global _IMPL, _KERNEL_NAME
    if name == "numpy":
        _IMPL, _KERNEL_NAME = _npkernels, "numpy"
    elif name == "cython":
        try:
            from . import _cykernels
        except ImportError:
            raise ConfigError("cython kernels are not built") from None
        _IMPL, _KERNEL_NAME = _cykernels, "cython"
    else:
        raise ConfigError(f"unknown kernel backend {name!r}")
    return _KERNEL_NAME


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 64
    gamma: float = 40.0

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ConfigError(f"resolution must be an integer >= 8, got {self.resolution}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")


@dataclass
class PartMaskStack:
    """Six-channel mask stack, data shape (6, H, W), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != N_PARTS:
            raise DimensionError(f"mask stack must be (6, H, W), got {self.data.shape}")

    @property
    def resolution(self):
        return self.data.shape[1:]

    @classmethod
    def from_labels(cls, labels):
        """Binary stack from a part-label image (0 background, 1..6 parts)."""
        labels = np.asarray(labels)
        return cls(np.stack([(labels == d).astype(np.float64) for d in range(1, N_PARTS + 1)]))

    def to_labels(self):
        """Label image from a (near-)binary stack; ties go to the lower part id."""
        occupied = self.data.max(axis=0) >= 0.5
        return np.where(occupied, np.argmax(self.data >= 0.5, axis=0) + 1, 0).astype(np.uint8)

    def binarize(self, threshold=0.5):
        return PartMaskStack((self.data >= threshold).astype(np.float64))

    def foreground(self):
        return 1.0 - np.prod(1.0 - self.data, axis=0)


def _check_raster_inputs(verts2d, faces, face_part):
    verts2d = np.ascontiguousarray(verts2d, dtype=np.float64)
    if verts2d.ndim != 2 or verts2d.shape[1] != 2:
        raise DimensionError(f"verts2d must be (N, 2), got {verts2d.shape}")
    if not np.all(np.isfinite(verts2d)):
        raise NumericsError("non-finite vertices passed to rasterizer", primitive="rasterize")
    faces = np.ascontiguousarray(faces, dtype=np.int32)
    face_part = np.ascontiguousarray(face_part, dtype=np.int32)
    if faces.ndim != 2 or faces.shape[1] != 3 or face_part.shape != (faces.shape[0],):
        raise DimensionError("faces must be (F, 3) with one part label per face")
    if faces.size and (faces.min() < 0 or faces.max() >= verts2d.shape[0]):
        raise DimensionError("face indices out of vertex range")
    if face_part.size and (face_part.min() < 1 or face_part.max() > N_PARTS):
        raise ConfigError("face part labels must lie in 1..6")
    return verts2d, faces, face_part


def rasterize_soft(verts2d, faces, face_part, config):
    """Soft part-mask stack for projected vertices (no gradient bookkeeping)."""
    verts2d, faces, face_part = _check_raster_inputs(verts2d, faces, face_part)
    stack, _ = _IMPL.soft_forward(verts2d, faces, face_part, config.resolution, config.gamma)
    return PartMaskStack(np.asarray(stack))


def rasterize_soft_vars(verts2d, faces, face_part, config):
    """Graph op: Var (N, 2) -> Var (6, H, W) soft mask stack."""
    impl = _IMPL
    v = ad.asvar(verts2d)
    verts, faces, face_part = _check_raster_inputs(v.value, faces, face_part)
    stack, saved = impl.soft_forward(verts, faces, face_part, config.resolution, config.gamma)

    def vjp(g):
        g = np.ascontiguousarray(g, dtype=np.float64)
        return (
            np.asarray(
                impl.soft_backward(g, verts, faces, face_part, config.resolution, config.gamma, saved)
            ),
        )

    return ad.Var(np.asarray(stack), (v,), vjp, op="rasterize_soft")


def rasterize_hard_labels(verts2d, depth, faces, face_part, config):
    """Z-buffered part-label image (H, W) uint8; 0 is background."""
    verts2d, faces, face_part = _check_raster_inputs(verts2d, faces, face_part)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if depth.shape != (verts2d.shape[0],):
        raise DimensionError("depth must have one entry per vertex")
    return np.asarray(_IMPL.hard_forward(verts2d, depth, faces, face_part, config.resolution))


def rasterize_hard(verts2d, depth, faces, face_part, config):
    """Hard binary part-mask stack (z-buffered)."""
    return PartMaskStack.from_labels(rasterize_hard_labels(verts2d, depth, faces, face_part, config))


def render_labels(model, params, config):
    """Forward the body model, project, and rasterize the hard label image."""
    from .. import body_model as bm
    from ..camera import CameraParams, project

    verts, _ = bm.forward(model, params)
    verts2d = project(verts, CameraParams(params.scale, params.trans))
    return rasterize_hard_labels(verts2d, verts[:, 2], model.faces, model.face_part, config)


__all__ = [
    "N_PARTS",
    "PartMaskStack",
    "RenderConfig",
    "active_kernel",
    "set_kernel",
    "rasterize_soft",
    "rasterize_soft_vars",
    "rasterize_hard",
    "rasterize_hard_labels",
    "render_labels",
    "write_pgm",
    "read_pgm",
    "save_labels",
    "load_labels",
    "save_soft_stack",
    "load_soft_stack",
]
