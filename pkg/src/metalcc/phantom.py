"""Paired with/without-metal scenes built from geometric primitives."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from metalcc.geometry import Volume, VoxelGrid

SHAPES = ("sphere", "cylinder", "box", "capsule")

# linear attenuation in 1/mm, roughly 70 keV
SOFT_TISSUE = 0.02
BONE = 0.05
METAL = 10 * BONE


@dataclass(frozen=True)
class Primitive:
    """A solid with uniform attenuation.

    ``size`` is ``(radius,)`` for sphere, cylinder and capsule and the three
    half-extents for an axis-aligned box. Cylinders and capsules extend
    ``half_length`` either side of ``center`` along ``axis``.
    """

    shape: str
    center: tuple[float, float, float]
    size: tuple[float, ...]
    attenuation: float
    is_metal: bool = False
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    half_length: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if len(self.center) != 3 or axis.shape != (3,) or norm == 0:
            raise ValueError("center and axis must be non-degenerate 3-vectors")
        object.__setattr__(self, "axis", tuple(float(a) for a in axis / norm))
        n_size = 3 if self.shape == "box" else 1
        if len(self.size) != n_size or min(self.size) <= 0:
            raise ValueError(f"{self.shape} needs {n_size} positive size value(s)")
        if self.attenuation < 0:
            raise ValueError("attenuation must be non-negative")
        if self.shape in ("cylinder", "capsule") and self.half_length < 0:
            raise ValueError("half_length must be non-negative")

    def contains(self, x, y, z) -> np.ndarray:
        cx, cy, cz = self.center
        dx, dy, dz = x - cx, y - cy, z - cz
        if self.shape == "sphere":
            return dx * dx + dy * dy + dz * dz <= self.size[0] ** 2
        if self.shape == "box":
            hx, hy, hz = self.size
            return (np.abs(dx) <= hx) & (np.abs(dy) <= hy) & (np.abs(dz) <= hz)
        ax, ay, az = self.axis
        along = dx * ax + dy * ay + dz * az
        r2 = self.size[0] ** 2
        if self.shape == "cylinder":
            radial2 = dx * dx + dy * dy + dz * dz - along * along
            return (np.abs(along) <= self.half_length) & (radial2 <= r2)
        t = np.clip(along, -self.half_length, self.half_length)
        ex, ey, ez = dx - t * ax, dy - t * ay, dz - t * az
        return ex * ex + ey * ey + ez * ez <= r2

    def to_dict(self) -> dict:
        pose = {"center": list(self.center)}
        if self.shape in ("cylinder", "capsule"):
            pose["axis"] = list(self.axis)
            pose["half_length"] = self.half_length
        return {"shape": self.shape, "pose": pose, "size": list(self.size),
                "attenuation": self.attenuation, "is_metal": self.is_metal}

    @classmethod
    def from_dict(cls, rec: dict) -> "Primitive":
        unknown = set(rec) - {"shape", "pose", "size", "attenuation", "is_metal"}
        if unknown:
            raise ValueError(f"primitive: unknown keys {sorted(unknown)}")
        pose = dict(rec["pose"])
        bad_pose = set(pose) - {"center", "axis", "half_length"}
        if bad_pose:
            raise ValueError(f"primitive pose: unknown keys {sorted(bad_pose)}")
        return cls(shape=rec["shape"], center=tuple(pose["center"]),
                   size=tuple(rec["size"]), attenuation=float(rec["attenuation"]),
                   is_metal=bool(rec.get("is_metal", False)),
                   axis=tuple(pose.get("axis", (0.0, 0.0, 1.0))),
                   half_length=float(pose.get("half_length", 0.0)))


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...] = field(default_factory=tuple)
    background_attenuation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.background_attenuation < 0:
            raise ValueError("background_attenuation must be non-negative")

    @property
    def metal(self) -> tuple[Primitive, ...]:
        return tuple(p for p in self.primitives if p.is_metal)

    def to_json_obj(self) -> dict:
        return {"background_attenuation": self.background_attenuation,
                "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_json_obj(cls, obj) -> "Scene":
        # a bare list of primitive records means zero background
        if isinstance(obj, list):
            return cls(tuple(Primitive.from_dict(r) for r in obj))
        unknown = set(obj) - {"background_attenuation", "primitives"}
        if unknown:
            raise ValueError(f"scene: unknown keys {sorted(unknown)}")
        return cls(tuple(Primitive.from_dict(r) for r in obj["primitives"]),
                   float(obj.get("background_attenuation", 0.0)))


def voxelize(scene: Scene, grid: VoxelGrid, supersample: int = 1) -> Volume:
    """Sample the scene at voxel centers; the last containing primitive wins.

    With ``supersample > 1`` each voxel averages an ``s^3`` lattice of
    sub-samples, giving a partial-volume field instead of crisp edges.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    xs, ys, zs = grid.axes()
    h = grid.voxel_size
    offsets = ((np.arange(supersample) + 0.5) / supersample - 0.5) * h
    acc = np.zeros(grid.shape, dtype=np.float64)
    for oz in offsets:
        z = (zs + oz)[:, None, None]
        for oy in offsets:
            y = (ys + oy)[None, :, None]
            for ox in offsets:
                x = (xs + ox)[None, None, :]
                acc += _sample(scene, grid.shape, x, y, z)
    if supersample > 1:
        acc /= supersample ** 3
    return Volume(grid, acc)


def _sample(scene: Scene, shape, x, y, z) -> np.ndarray:
    out = np.full(shape, scene.background_attenuation, dtype=np.float64)
    for prim in scene.primitives:
        out[np.broadcast_to(prim.contains(x, y, z), shape)] = prim.attenuation
    return out


def metal_support(scene: Scene, grid: VoxelGrid) -> np.ndarray:
    """Boolean voxel mask of centers inside any metal primitive."""
    xs, ys, zs = grid.axes()
    x, y, z = xs[None, None, :], ys[None, :, None], zs[:, None, None]
    out = np.zeros(grid.shape, dtype=bool)
    for prim in scene.metal:
        out |= np.broadcast_to(prim.contains(x, y, z), grid.shape)
    return out


def split_metal(scene: Scene) -> tuple[Scene, Scene]:
    without = replace(scene, primitives=tuple(p for p in scene.primitives if not p.is_metal))
    return scene, without


def standard_phantoms(fov_radius: float = 80.0) -> dict[str, Scene]:
    """Knee-like scenes with metal placed relative to the diagnostic FOV.

    ``fov_radius`` is the half-width (mm) of the diagnostic grid; the
    out-of-FOV scene puts one implant at 1.25x that radius, which the default
    CC grids (1.5x to 1.8x) still cover.
    """
    s = fov_radius / 80.0

    def body(radius, *extra):
        return Scene((
            Primitive("cylinder", (0, 0, 0), (radius * s,), SOFT_TISSUE, half_length=400 * s),
            Primitive("cylinder", (0, 0, 0), (25 * s,), BONE, half_length=400 * s),
            *extra,
        ))

    # round implants only: flat faces let voxels just outside them pass a
    # 0.95 consistency threshold
    in_fov = body(
        75,
        Primitive("capsule", (0, 0, 0), (8 * s,), METAL, is_metal=True, half_length=15 * s),
        Primitive("sphere", (-25 * s, 30 * s, 10 * s), (10 * s,), METAL, is_metal=True),
    )
    out_of_fov = body(
        92,
        Primitive("sphere", (0, 0, 0), (14 * s,), METAL, is_metal=True),
        Primitive("sphere", (1.25 * fov_radius, 0, 0), (12 * s,), METAL, is_metal=True),
    )
    fragments = body(75, *(
        Primitive("sphere", c, (r * s,), METAL, is_metal=True)
        for c, r in (((-10 * s, 5 * s, 0), 6), ((12 * s, -8 * s, 6 * s), 5),
                     ((0, 15 * s, -10 * s), 5), ((20 * s, 20 * s, 12 * s), 4))
    ))
    return {"in_fov": in_fov, "out_of_fov": out_of_fov, "fragments": fragments}
