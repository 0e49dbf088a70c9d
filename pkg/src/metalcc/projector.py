"""Ray-driven forward projection and voxel-driven visitor back-projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from metalcc import _kernels
from metalcc.geometry import ProjectionGeometry, Volume, VoxelGrid, _kernel_args


@dataclass
class ProjectionStack:
    geom: ProjectionGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _check_stack_shape(self.geom, self.data)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("projection stack contains non-finite values")


@dataclass
class MaskStack:
    geom: ProjectionGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        _check_stack_shape(self.geom, data)
        if data.dtype != np.uint8:
            if not np.all((data == 0) | (data == 1)):
                raise ValueError("mask stack must be binary")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise ValueError("mask stack must be binary")
        self.data = data

    def pixel_counts(self) -> np.ndarray:
        return self.data.reshape(self.data.shape[0], -1).sum(axis=1, dtype=np.int64)


@dataclass
class VisitorVolume:
    grid: VoxelGrid
    visits: np.ndarray = field(repr=False)
    max_visits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.visits.shape != self.grid.shape or self.max_visits.shape != self.grid.shape:
            raise ValueError("visitor arrays must match the grid shape")
        if np.any(self.visits < 0) or np.any(self.visits > self.max_visits):
            raise ValueError("visits must lie in [0, max_visits]")


@dataclass
class ConsistencyVolume:
    grid: VoxelGrid
    value: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.value.shape != self.grid.shape:
            raise ValueError("consistency array must match the grid shape")


def _check_stack_shape(geom: ProjectionGeometry, data: np.ndarray) -> None:
    if data.shape != geom.stack_shape:
        raise ValueError(f"stack shape {data.shape} != geometry {geom.stack_shape}")


def forward_project(vol: Volume, geom: ProjectionGeometry) -> ProjectionStack:
    """Line integrals through every detector pixel center (Siddon traversal).

    Units follow the volume: attenuation in 1/mm gives dimensionless line
    integrals, a 0/1 indicator gives intersection length in mm.
    """
    data = np.ascontiguousarray(vol.data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError("volume contains non-finite values")
    grid = vol.grid
    ox, oy, oz = grid.origin
    angles = geom.angles()
    out = _kernels.forward(
        data, ox, oy, oz, grid.voxel_size, np.cos(angles), np.sin(angles),
        geom.source_axis_distance, geom.source_detector_distance, geom.pixel_pitch,
        geom.detector_cols, geom.detector_rows,
    )
    return ProjectionStack(geom, out)


def backproject_visitors(masks: MaskStack, grid: VoxelGrid) -> VisitorVolume:
    """Per-voxel count of masks that cover the voxel center (nearest pixel).

    ``max_visits`` is the number of views seeing the voxel at all, identical
    to :func:`metalcc.geometry.max_visitors`.
    """
    data = np.ascontiguousarray(masks.data, dtype=np.uint8)
    visits, seen = _kernels.backproject(data, True, *_kernel_args(masks.geom, grid))
    return VisitorVolume(grid, visits, seen)


def normalize_visitors(vv: VisitorVolume) -> ConsistencyVolume:
    value = np.zeros(vv.grid.shape, dtype=np.float64)
    seen = vv.max_visits > 0
    value[seen] = vv.visits[seen] / vv.max_visits[seen]
    return ConsistencyVolume(vv.grid, value)


def reproject_mask(mask3d: Volume, geom: ProjectionGeometry, eps: float | None = None) -> MaskStack:
    """Detector pixels whose ray runs more than ``eps`` mm through the mask.

    ``eps`` defaults to half a voxel so grazing rays are dropped.
    """
    if eps is None:
        eps = mask3d.grid.voxel_size / 2
    if eps < 0:
        raise ValueError("eps must be non-negative")
    data = np.asarray(mask3d.data)
    if not np.all((data == 0) | (data == 1)):
        raise ValueError("mask3d must be binary")
    lengths = forward_project(Volume(mask3d.grid, data.astype(np.float64)), geom)
    return MaskStack(geom, (lengths.data > eps).astype(np.uint8))
