"""Circular short-scan cone-beam geometry and voxel grids.

World frame: the rotation axis is z, the central plane is z = 0 and the
isocenter is the origin. At gantry angle ``a`` the source sits at
``SAD * (cos a, -sin a, 0)`` and the flat detector is perpendicular to the
central ray on the opposite side. Detector coordinate ``u`` runs along
``(sin a, cos a, 0)`` and ``v`` along +z, both in pixels with the origin at
the detector corner, so pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)`` and
the isocenter maps to ``(cols/2, rows/2)``.

Volumes are stored C-order as ``(nz, ny, nx)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from metalcc import _kernels


def _check_keys(cls, data: dict) -> None:
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class ProjectionGeometry:
    source_axis_distance: float = 622.0
    source_detector_distance: float = 1164.0
    detector_cols: int = 976
    detector_rows: int = 976
    pixel_pitch: float = 0.308
    n_views: int = 400
    scan_arc: float = 200.0
    start_angle: float = 0.0

    def __post_init__(self):
        if not self.source_axis_distance > 0:
            raise ValueError("source_axis_distance must be positive")
        if not self.source_detector_distance > self.source_axis_distance:
            raise ValueError("source_detector_distance must exceed source_axis_distance")
        if self.n_views < 1 or self.detector_cols < 1 or self.detector_rows < 1:
            raise ValueError("n_views and detector size must be >= 1")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if not 0 < self.scan_arc <= 360:
            raise ValueError("scan_arc must lie in (0, 360]")

    @property
    def magnification(self) -> float:
        return self.source_detector_distance / self.source_axis_distance

    @property
    def detector_shape(self) -> tuple[int, int]:
        return (self.detector_rows, self.detector_cols)

    @property
    def stack_shape(self) -> tuple[int, int, int]:
        return (self.n_views, self.detector_rows, self.detector_cols)

    def angles(self) -> np.ndarray:
        """All view angles in radians, endpoint-inclusive over the arc."""
        return np.array([view_angle(self, i) for i in range(self.n_views)])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectionGeometry":
        _check_keys(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class VoxelGrid:
    nx: int
    ny: int
    nz: int
    voxel_size: float
    center_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        offset = tuple(float(c) for c in self.center_offset)
        if len(offset) != 3:
            raise ValueError("center_offset must be a 3-vector")
        object.__setattr__(self, "center_offset", offset)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def origin(self) -> np.ndarray:
        """Corner of the grid (minimum x, y, z boundary) in mm."""
        n = np.array([self.nx, self.ny, self.nz], dtype=float)
        return np.asarray(self.center_offset) - 0.5 * n * self.voxel_size

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin
        hi = lo + np.array([self.nx, self.ny, self.nz]) * self.voxel_size
        return lo, hi

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel-center coordinates along x, y and z (mm)."""
        lo = self.origin
        h = self.voxel_size
        return tuple(lo[k] + (np.arange(n) + 0.5) * h
                     for k, n in enumerate((self.nx, self.ny, self.nz)))

    def contains(self, other: "VoxelGrid", tol: float = 1e-9) -> bool:
        lo, hi = self.extent
        olo, ohi = other.extent
        return bool(np.all(lo <= olo + tol) and np.all(hi >= ohi - tol))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center_offset"] = list(self.center_offset)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "VoxelGrid":
        _check_keys(cls, data)
        data = dict(data)
        if "center_offset" in data:
            data["center_offset"] = tuple(data["center_offset"])
        return cls(**data)


class DetectorCoord(NamedTuple):
    u: float
    v: float
    inside: bool


@dataclass
class Volume:
    """Scalar field on a voxel grid; ``data`` has shape ``grid.shape``."""

    grid: VoxelGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} != grid shape {self.grid.shape}")
        if self.data.dtype.kind == "f" and not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")


def view_angle(geom: ProjectionGeometry, i: int) -> float:
    if not 0 <= i < geom.n_views:
        raise IndexError(f"view index {i} out of range [0, {geom.n_views})")
    if geom.n_views == 1:
        return math.radians(geom.start_angle)
    step = geom.scan_arc / (geom.n_views - 1)
    return math.radians(geom.start_angle + i * step)


def project_point(geom: ProjectionGeometry, angle: float, p) -> DetectorCoord:
    x, y, z = (float(c) for c in p)
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise ValueError("point must be finite")
    u, v, ok = _kernels.project_point(
        x, y, z, math.cos(angle), math.sin(angle),
        geom.source_axis_distance, geom.source_detector_distance, geom.pixel_pitch,
        geom.detector_cols, geom.detector_rows,
    )
    return DetectorCoord(u, v, bool(ok))


def max_visitors(geom: ProjectionGeometry, grid: VoxelGrid) -> Volume:
    """Number of views in which each voxel center lands on the detector."""
    _, counts = _kernels.backproject(
        np.zeros((geom.n_views, 1, 1), dtype=np.uint8), False,
        *_kernel_args(geom, grid),
    )
    return Volume(grid, counts)


def _kernel_args(geom: ProjectionGeometry, grid: VoxelGrid) -> tuple:
    angles = geom.angles()
    xs, ys, zs = grid.axes()
    return (
        np.cos(angles), np.sin(angles), xs, ys, zs,
        geom.source_axis_distance, geom.source_detector_distance, geom.pixel_pitch,
        geom.detector_cols, geom.detector_rows,
    )


def auto_cc_grid(geom: ProjectionGeometry, voxel_size: float,
                 min_visible_fraction: float = 0.5, even: bool = True) -> VoxelGrid:
    """Centered cubic grid covering every point visible in enough views.

    The candidate region is sampled on a coarse lattice out to the source
    circle; the returned grid is the smallest isocentric cube holding all
    samples seen by at least ``min_visible_fraction`` of the views.
    """
    if not 0 < min_visible_fraction <= 1:
        raise ValueError("min_visible_fraction must lie in (0, 1]")
    reach = geom.source_axis_distance
    n_probe = 81
    probe = VoxelGrid(n_probe, n_probe, n_probe, 2 * reach / n_probe)
    counts = max_visitors(geom, probe).data
    seen = counts >= min_visible_fraction * geom.n_views
    if not seen.any():
        raise ValueError("no point is visible in the requested fraction of views")
    xs, ys, zs = probe.axes()
    kz, ky, kx = np.nonzero(seen)
    half = max(np.abs(xs[kx]).max(), np.abs(ys[ky]).max(), np.abs(zs[kz]).max())
    half += probe.voxel_size / 2
    n = int(math.ceil(2 * half / voxel_size))
    if even and n % 2:
        n += 1
    return VoxelGrid(n, n, n, voxel_size)
