"""Consistency check for stacks of binarized projection-domain metal masks.

The binarized stack is back-projected into a visitor counter, normalized by
the number of views that can see each voxel, thresholded into a 3D metal
mask, and forward-projected again. The result is, by construction, the
projection of one 3D object and therefore consistent across views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from metalcc.geometry import Volume, VoxelGrid
from metalcc.projector import (ConsistencyVolume, MaskStack, VisitorVolume, backproject_visitors,
                               normalize_visitors, reproject_mask)


@dataclass(frozen=True)
class CCConfig:
    cc_grid: VoxelGrid
    tau: float = 0.95
    reproject_eps: float | None = None
    diagnostic_grid: VoxelGrid | None = None

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.reproject_eps is not None and self.reproject_eps < 0:
            raise ValueError("reproject_eps must be non-negative")
        if self.diagnostic_grid is not None and not self.cc_grid.contains(self.diagnostic_grid):
            raise ValueError("cc_grid must contain the diagnostic grid")

    @property
    def eps(self) -> float:
        return self.cc_grid.voxel_size / 2 if self.reproject_eps is None else self.reproject_eps


@dataclass
class CCResult:
    consistent_masks: MaskStack
    consistency: ConsistencyVolume | None = field(repr=False)
    metal3d: Volume | None = field(repr=False)
    retained_pixels: np.ndarray
    removed_pixels: np.ndarray
    added_pixels: np.ndarray
    visitors: VisitorVolume | None = field(default=None, repr=False)

    def summary(self) -> dict:
        out = {
            "output_pixels": int(self.consistent_masks.data.sum(dtype=np.int64)),
            "retained_pixels": int(self.retained_pixels.sum()),
            "removed_pixels": int(self.removed_pixels.sum()),
            "added_pixels": int(self.added_pixels.sum()),
        }
        if self.metal3d is not None:
            out["metal_voxels"] = int(self.metal3d.data.sum(dtype=np.int64))
        return out


def threshold_consistency(c: ConsistencyVolume, tau: float) -> Volume:
    """Voxels segmented in at least a ``tau`` fraction of the views seeing them."""
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    return Volume(c.grid, (c.value >= tau).astype(np.uint8))


def _pixel_accounting(before: MaskStack, after: MaskStack):
    n = before.data.shape[0]
    a = before.data.reshape(n, -1).astype(bool)
    b = after.data.reshape(n, -1).astype(bool)
    retained = (a & b).sum(axis=1)
    removed = (a & ~b).sum(axis=1)
    added = (~a & b).sum(axis=1)
    return retained, removed, added


def _finish(masks: MaskStack, vv: VisitorVolume, cons: ConsistencyVolume, tau: float,
            cfg: CCConfig, keep_intermediates: bool) -> CCResult:
    metal3d = threshold_consistency(cons, tau)
    out = reproject_mask(metal3d, masks.geom, cfg.eps)
    retained, removed, added = _pixel_accounting(masks, out)
    if not keep_intermediates:
        return CCResult(out, None, None, retained, removed, added)
    return CCResult(out, cons, metal3d, retained, removed, added, vv)


def consistency_check(masks: MaskStack, cfg: CCConfig, keep_intermediates: bool = True) -> CCResult:
    vv = backproject_visitors(masks, cfg.cc_grid)
    cons = normalize_visitors(vv)
    return _finish(masks, vv, cons, cfg.tau, cfg, keep_intermediates)


def cc_sweep(masks: MaskStack, cfg: CCConfig, taus, keep_intermediates: bool = False):
    """Run the check for several thresholds on one shared back-projection."""
    taus = [float(t) for t in taus]
    for tau in taus:
        if not 0 <= tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
    vv = backproject_visitors(masks, cfg.cc_grid)
    cons = normalize_visitors(vv)
    return [(tau, _finish(masks, vv, cons, tau, cfg, keep_intermediates)) for tau in taus]
