"""Simulated projection-domain metal segmentation.

Stands in for a trained patch network: ground truth comes from paired
with/without-metal projections, and the "network output" is the GT with
injected false-positive blobs and eroded views.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import ndimage

from metalcc.geometry import ProjectionGeometry
from metalcc.projector import MaskStack, ProjectionStack

Scorer = Callable[[np.ndarray], np.ndarray]

# substream tags for the per-(seed, view) generators
_BLOBS, _DROPOUT, _GT_CONF = 0, 1, 2


@dataclass
class SoftMaskStack:
    geom: ProjectionGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.geom.stack_shape:
            raise ValueError(f"stack shape {self.data.shape} != geometry {self.geom.stack_shape}")
        if np.any(self.data < 0) or np.any(self.data > 1):
            raise ValueError("soft mask confidences must lie in [0, 1]")


def _range(name, value, lo=None, hi=None):
    a, b = value
    if a > b:
        raise ValueError(f"{name}: min > max")
    if lo is not None and a < lo or hi is not None and b > hi:
        raise ValueError(f"{name}: outside [{lo}, {hi}]")
    return (a, b)


@dataclass(frozen=True)
class PerturbationConfig:
    fp_blob_rate: float = 0.0
    fp_blob_radius: tuple[float, float] = (2.0, 5.0)
    fp_confidence: tuple[float, float] = (0.06, 0.25)
    fp_persistence: tuple[int, int] = (1, 3)
    fn_dropout_rate: float = 0.0
    fn_erosion_radius: float = 2.0
    gt_confidence: tuple[float, float] = (0.6, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.fp_blob_rate < 0:
            raise ValueError("fp_blob_rate must be non-negative")
        if not 0 <= self.fn_dropout_rate <= 1:
            raise ValueError("fn_dropout_rate must lie in [0, 1]")
        if self.fn_erosion_radius < 0:
            raise ValueError("fn_erosion_radius must be non-negative")
        object.__setattr__(self, "fp_blob_radius", _range("fp_blob_radius", self.fp_blob_radius, lo=0))
        object.__setattr__(self, "fp_confidence", _range("fp_confidence", self.fp_confidence, 0, 1))
        object.__setattr__(self, "gt_confidence", _range("gt_confidence", self.gt_confidence, 0, 1))
        object.__setattr__(self, "fp_persistence",
                           tuple(int(n) for n in _range("fp_persistence", self.fp_persistence, lo=1)))
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbationConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"PerturbationConfig: unknown keys {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class PatchPlan:
    patch_size: int
    stride: int

    def validate(self, shape: tuple[int, int]) -> None:
        if not 1 <= self.stride <= self.patch_size <= min(shape):
            raise ValueError(f"invalid patch plan {self} for image {shape}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PatchPlan":
        unknown = set(data) - {"patch_size", "stride"}
        if unknown:
            raise ValueError(f"PatchPlan: unknown keys {sorted(unknown)}")
        return cls(int(data["patch_size"]), int(data["stride"]))


class Blob(NamedTuple):
    first_view: int
    n_views: int
    row: float
    col: float
    radius: float
    confidence: float

    def covers(self, view: int) -> bool:
        return self.first_view <= view < self.first_view + self.n_views


def view_rng(seed: int, view: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, view, stream)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(view), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def lambert_beer(intensities: ProjectionStack, i0: float) -> ProjectionStack:
    if not i0 > 0:
        raise ValueError("i0 must be positive")
    floor = 1e-12 * i0
    return ProjectionStack(intensities.geom, np.log(i0 / np.maximum(intensities.data, floor)))


def gt_masks(with_metal: ProjectionStack, without_metal: ProjectionStack, delta: float) -> MaskStack:
    if with_metal.geom != without_metal.geom:
        raise ValueError("paired stacks must share a geometry")
    if not delta > 0:
        raise ValueError("delta must be positive")
    return MaskStack(with_metal.geom, ((with_metal.data - without_metal.data) > delta).astype(np.uint8))


def generate_blobs(geom: ProjectionGeometry, cfg: PerturbationConfig) -> list[Blob]:
    """False-positive blobs, each born in one view and kept for a few more.

    A blob started near the end of the scan is truncated at the last view.
    """
    blobs = []
    lo_r, hi_r = cfg.fp_blob_radius
    lo_c, hi_c = cfg.fp_confidence
    lo_p, hi_p = cfg.fp_persistence
    for view in range(geom.n_views):
        rng = view_rng(cfg.seed, view, _BLOBS)
        for _ in range(rng.poisson(cfg.fp_blob_rate)):
            row = rng.uniform(0, geom.detector_rows)
            col = rng.uniform(0, geom.detector_cols)
            radius = rng.uniform(lo_r, hi_r)
            conf = rng.uniform(lo_c, hi_c)
            length = int(rng.integers(lo_p, hi_p + 1))
            blobs.append(Blob(view, min(length, geom.n_views - view), row, col, radius, conf))
    return blobs


def blob_footprint(blob: Blob, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centers fall inside the blob disk."""
    rows = np.arange(shape[0])[:, None] + 0.5
    cols = np.arange(shape[1])[None, :] + 0.5
    return (rows - blob.row) ** 2 + (cols - blob.col) ** 2 <= blob.radius ** 2


def _disk(radius: float) -> np.ndarray:
    n = int(math.floor(radius))
    yy, xx = np.mgrid[-n:n + 1, -n:n + 1]
    return xx * xx + yy * yy <= radius * radius


def simulate_soft_masks(gt: MaskStack, cfg: PerturbationConfig) -> SoftMaskStack:
    geom = gt.geom
    out = np.zeros(geom.stack_shape, dtype=np.float64)
    lo, hi = cfg.gt_confidence
    structure = _disk(cfg.fn_erosion_radius) if cfg.fn_erosion_radius >= 1 else None
    for view in range(geom.n_views):
        region = gt.data[view].astype(bool)
        drop = view_rng(cfg.seed, view, _DROPOUT).random() < cfg.fn_dropout_rate
        if drop and structure is not None:
            region = ndimage.binary_erosion(region, structure=structure, border_value=0)
        conf = view_rng(cfg.seed, view, _GT_CONF).uniform(lo, hi, size=geom.detector_shape)
        out[view][region] = conf[region]

    for blob in generate_blobs(geom, cfg):
        disk = blob_footprint(blob, geom.detector_shape)
        for view in range(blob.first_view, blob.first_view + blob.n_views):
            np.maximum(out[view], np.where(disk, blob.confidence, 0.0), out=out[view])
    return SoftMaskStack(geom, out)


def binarize(soft: SoftMaskStack, threshold_percent: float) -> MaskStack:
    if not 0 < threshold_percent < 100:
        raise ValueError("threshold_percent must lie in (0, 100)")
    return MaskStack(soft.geom, (soft.data * 100 > threshold_percent).astype(np.uint8))


def window_starts(length: int, patch: int, stride: int) -> list[int]:
    """Window offsets along one axis; the last window is clamped to the edge."""
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def stitch_patches(image: np.ndarray, scorer: Scorer, plan: PatchPlan,
                   normalize: bool = False) -> np.ndarray:
    """Slide a window over ``image`` and sum the scored patches.

    The raw sum is returned unless ``normalize`` is set, in which case each
    pixel is divided by the number of windows covering it.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2D")
    plan.validate(image.shape)
    p = plan.patch_size
    acc = np.zeros_like(image)
    cover = np.zeros(image.shape, dtype=np.int64)
    for r in window_starts(image.shape[0], p, plan.stride):
        for c in window_starts(image.shape[1], p, plan.stride):
            score = np.asarray(scorer(image[r:r + p, c:c + p]), dtype=np.float64)
            if score.shape != (p, p):
                raise ValueError(f"scorer returned shape {score.shape}, expected {(p, p)}")
            acc[r:r + p, c:c + p] += score
            cover[r:r + p, c:c + p] += 1
    if normalize:
        acc /= cover
    return acc


def reference_scorer(threshold: float) -> Scorer:
    """Patch scorer that flags line integrals above ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")

    def score(patch: np.ndarray) -> np.ndarray:
        return (np.asarray(patch) > threshold).astype(np.float64)

    return score
