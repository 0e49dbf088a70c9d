"""Config-driven simulation and evaluation runs.

Stages, in order: ``phantom`` -> ``project`` -> ``segment-sim`` -> ``cc`` ->
``metrics`` -> ``report``. Each run writes its artifacts and a
``manifest.json`` into the output directory; a failed stage is recorded in
the manifest and earlier artifacts are kept.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from metalcc import __version__
from metalcc.consistency import CCConfig, consistency_check
from metalcc.geometry import ProjectionGeometry, VoxelGrid
from metalcc.io import export_pgm, write_array
from metalcc.metrics import GridRow, format_table, mask_metrics, roc_auc, rows_to_csv, rows_to_json
from metalcc.phantom import Scene, split_metal, standard_phantoms, voxelize
from metalcc.projector import ProjectionStack, forward_project
from metalcc.segsim import (PatchPlan, PerturbationConfig, binarize, gt_masks,
                            lambert_beer, reference_scorer, simulate_soft_masks, stitch_patches)

log = logging.getLogger(__name__)

STAGES = ("phantom", "project", "segment-sim", "cc", "metrics", "report")


def _desk() -> dict:
    return {
        "geometry": ProjectionGeometry(detector_cols=96, detector_rows=96, pixel_pitch=3.125,
                                       n_views=100),
        "diagnostic_grid": VoxelGrid(64, 64, 64, 2.5),
        "cc_grid": VoxelGrid(96, 96, 96, 2.5),
    }


def _full_scale() -> dict:
    return {
        "geometry": ProjectionGeometry(),
        "diagnostic_grid": VoxelGrid(512, 512, 512, 0.31),
        "cc_grid": VoxelGrid(920, 920, 920, 0.31),
    }


PROFILES = {"desk": _desk, "paper": _full_scale}


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: ProjectionGeometry
    diagnostic_grid: VoxelGrid
    cc_grid: VoxelGrid
    scene: str | Scene = "in_fov"
    perturbation: PerturbationConfig = field(
        default_factory=lambda: PerturbationConfig(fp_blob_rate=2.0))
    thresholds: tuple[float, ...] = (5.0, 30.0, 55.0)
    tau: float = 0.95
    seed: int = 0
    output_dir: str = "runs/latest"
    # grid the phantom is voxelized on for simulation; None means cc_grid
    simulation_grid: VoxelGrid | None = None
    # metal-over-tissue contrast (0.48/mm) times the default re-projection eps
    # (half a 2.5 mm voxel), so GT and CC agree on the minimum metal chord
    gt_delta: float = 0.6
    reproject_eps: float | None = None
    i0: float | None = 1.0e5
    preview_views: tuple[int, ...] | None = None
    stitch: dict | None = None
    skip_empty: bool = False

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        for t in self.thresholds:
            if not 0 < t < 100:
                raise ValueError(f"threshold {t} outside (0, 100)")
        if isinstance(self.scene, str) and self.scene not in standard_phantoms():
            raise ValueError(f"unknown scene catalog key {self.scene!r}")
        if not self.cc_grid.contains(self.diagnostic_grid):
            raise ValueError("cc_grid must contain the diagnostic grid")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.preview_views is not None:
            object.__setattr__(self, "preview_views", tuple(int(v) for v in self.preview_views))
            if any(not 0 <= v < self.geometry.n_views for v in self.preview_views):
                raise ValueError("preview view out of range")
        if self.stitch is not None:
            unknown = set(self.stitch) - {"patch_size", "stride", "threshold", "view"}
            if unknown:
                raise ValueError(f"stitch: unknown keys {sorted(unknown)}")

    @property
    def sim_grid(self) -> VoxelGrid:
        return self.simulation_grid or self.cc_grid

    @property
    def fov_radius(self) -> float:
        g = self.diagnostic_grid
        return 0.5 * min(g.nx, g.ny) * g.voxel_size

    def resolved_scene(self) -> Scene:
        if isinstance(self.scene, Scene):
            return self.scene
        return standard_phantoms(self.fov_radius)[self.scene]

    def cc_config(self) -> CCConfig:
        return CCConfig(self.cc_grid, self.tau, self.reproject_eps, self.diagnostic_grid)

    def previews(self) -> tuple[int, ...]:
        if self.preview_views is not None:
            return self.preview_views
        return (0, self.geometry.n_views // 2)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "diagnostic_grid": self.diagnostic_grid.to_dict(),
            "cc_grid": self.cc_grid.to_dict(),
            "scene": self.scene if isinstance(self.scene, str) else self.scene.to_json_obj(),
            "perturbation": self.perturbation.to_dict(),
            "thresholds": list(self.thresholds),
            "tau": self.tau,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "simulation_grid": None if self.simulation_grid is None else self.simulation_grid.to_dict(),
            "gt_delta": self.gt_delta,
            "reproject_eps": self.reproject_eps,
            "i0": self.i0,
            "preview_views": None if self.preview_views is None else list(self.preview_views),
            "stitch": self.stitch,
            "skip_empty": self.skip_empty,
        }

    def semantic_hash(self) -> str:
        """SHA-256 over every field that can change the outputs."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(overrides: dict | None = None, profile: str = "desk") -> ExperimentConfig:
    """Build a config from a profile, then apply JSON-style overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    base = PROFILES[profile]()
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"config: unknown keys {sorted(unknown)}")
    kw = dict(base)
    parsers = {
        "geometry": ProjectionGeometry.from_dict,
        "diagnostic_grid": VoxelGrid.from_dict,
        "cc_grid": VoxelGrid.from_dict,
        "simulation_grid": lambda d: None if d is None else VoxelGrid.from_dict(d),
        "perturbation": PerturbationConfig.from_dict,
        "scene": lambda s: s if isinstance(s, str) else Scene.from_json_obj(s),
    }
    for key, value in overrides.items():
        kw[key] = parsers[key](value) if key in parsers else value
    if isinstance(kw.get("thresholds"), list):
        kw["thresholds"] = tuple(kw["thresholds"])
    return ExperimentConfig(**kw)


def read_config_file(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"metalcc": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "numba": numba.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resource_warning(cfg: ExperimentConfig) -> str | None:
    g = cfg.cc_grid
    vol_bytes = g.nx * g.ny * g.nz * 8
    stack_bytes = int(np.prod(cfg.geometry.stack_shape)) * 8
    total = 6 * vol_bytes + 6 * stack_bytes
    if total > 8 * 2 ** 30:
        return (f"this configuration needs roughly {total / 2 ** 30:.0f} GiB of memory "
                f"and hours of single-node compute")
    return None


class Run:
    """One pipeline execution writing into ``out``."""

    def __init__(self, cfg: ExperimentConfig, out):
        self.cfg = cfg
        self.out = Path(out)
        self.stage = None
        self.artifacts: list[Path] = []
        self.rows = None

    def _array(self, name, value, semantic, **kw):
        self.artifacts.append(write_array(self.out / "arrays" / name, value, semantic, **kw))
        self.artifacts.append((self.out / "arrays" / name).with_suffix(".json"))

    def _pgm(self, name, image):
        self.artifacts.append(export_pgm(image, self.out / "pgm" / f"{name}.pgm"))

    def _text(self, name, text):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.artifacts.append(path)

    def phantom(self):
        with_s, without_s = split_metal(self.cfg.resolved_scene())
        self.vol_with = voxelize(with_s, self.cfg.sim_grid)
        self.vol_without = voxelize(without_s, self.cfg.sim_grid)
        self._array("phantom_with_metal", self.vol_with, "attenuation")
        self._array("phantom_without_metal", self.vol_without, "attenuation")

    def _acquire(self, vol) -> ProjectionStack:
        proj = forward_project(vol, self.cfg.geometry)
        if self.cfg.i0 is None:
            return proj
        intensities = ProjectionStack(proj.geom, self.cfg.i0 * np.exp(-proj.data))
        return lambert_beer(intensities, self.cfg.i0)

    def project(self):
        self.proj_with = self._acquire(self.vol_with)
        self.proj_without = self._acquire(self.vol_without)
        self.gt = gt_masks(self.proj_with, self.proj_without, self.cfg.gt_delta)
        self._array("proj_with_metal", self.proj_with, "line_integral")
        self._array("proj_without_metal", self.proj_without, "line_integral")
        self._array("gt_masks", self.gt, "mask")
        for v in self.cfg.previews():
            self._pgm(f"projection_v{v:03d}", self.proj_with.data[v])
            self._pgm(f"gt_v{v:03d}", self.gt.data[v])

    def segment_sim(self):
        pert = replace(self.cfg.perturbation, seed=self.cfg.seed)
        self.soft = simulate_soft_masks(self.gt, pert)
        self._array("soft_masks", self.soft, "soft_mask")
        st = self.cfg.stitch
        if st:
            view = int(st.get("view", self.cfg.previews()[0]))
            plan = PatchPlan(int(st["patch_size"]), int(st["stride"]))
            summed = stitch_patches(self.proj_with.data[view], reference_scorer(float(st["threshold"])), plan)
            self._array(f"stitched_v{view:03d}", summed[None], "soft_mask",
                        spacing=self.cfg.geometry.pixel_pitch)
            self._pgm(f"stitched_v{view:03d}", summed)

    def cc(self):
        ccfg = self.cfg.cc_config()
        self.binary, self.cc_results = {}, {}
        for thr in self.cfg.thresholds:
            masks = binarize(self.soft, thr)
            result = consistency_check(masks, ccfg)
            self.binary[thr], self.cc_results[thr] = masks, result
            tag = f"t{thr:g}"
            self._array(f"masks_{tag}", masks, "mask")
            self._array(f"cc_{tag}_masks", result.consistent_masks, "mask")
            self._array(f"cc_{tag}_consistency", result.consistency, "consistency")
            self._array(f"cc_{tag}_visits", result.visitors.visits, "visits",
                        spacing=ccfg.cc_grid.voxel_size, grid=ccfg.cc_grid.to_dict())
            self._array(f"cc_{tag}_max_visits", result.visitors.max_visits, "visits",
                        spacing=ccfg.cc_grid.voxel_size, grid=ccfg.cc_grid.to_dict())
            self._array(f"cc_{tag}_metal3d", result.metal3d, "mask")
            for v in self.cfg.previews():
                self._pgm(f"pre_cc_{tag}_v{v:03d}", masks.data[v])
                self._pgm(f"post_cc_{tag}_v{v:03d}", result.consistent_masks.data[v])

    def metrics(self):
        try:
            auc = roc_auc(self.soft, self.gt)
        except ValueError:
            auc = None
        rows = []
        for thr in self.cfg.thresholds:
            for cc, masks in ((False, self.binary[thr]), (True, self.cc_results[thr].consistent_masks)):
                rows.append(GridRow(thr, cc, mask_metrics(masks, self.gt, self.cfg.skip_empty, auc)))
        self.rows = rows
        self._text("metrics.json", json.dumps({"rows": rows_to_json(rows), "auc": auc},
                                              indent=1, sort_keys=True) + "\n")
        self._text("metrics.txt", format_table(rows))
        self._text("metrics.csv", rows_to_csv(rows))

    def report(self):
        from metalcc import plotting
        figs = self.out / "figures"
        for v in self.cfg.previews():
            pre = {t: self.binary[t].data[v] for t in self.cfg.thresholds}
            post = {t: self.cc_results[t].consistent_masks.data[v] for t in self.cfg.thresholds}
            self.artifacts.append(plotting.mask_panel(
                self.proj_with.data[v], self.gt.data[v], pre, post,
                figs / f"masks_v{v:03d}.png", title=f"view {v}"))
        self.artifacts.append(plotting.metrics_bars(self.rows, figs / "metrics.png"))
        thr = self.cfg.thresholds[0]
        self.artifacts.append(plotting.consistency_slices(
            self.cc_results[thr].consistency.value, figs / f"consistency_t{thr:g}.png", self.cfg.tau))

    def execute(self, until: str = "report") -> int:
        if until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        self.out.mkdir(parents=True, exist_ok=True)
        cfg_path = self.out / "config.json"
        cfg_path.write_text(json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True) + "\n")
        self.artifacts.append(cfg_path)
        manifest = {"config_hash": self.cfg.semantic_hash(), "seed": self.cfg.seed,
                    "versions": _versions(), "stages": [], "status": "ok"}
        status = 0
        for stage in STAGES[:STAGES.index(until) + 1]:
            self.stage = stage
            log.info("stage %s", stage)
            try:
                getattr(self, stage.replace("-", "_"))()
            except Exception as exc:  # recorded in the manifest, reported via exit status
                log.exception("stage %s failed", stage)
                manifest.update(status="failed", failed_stage=stage,
                                error=f"{type(exc).__name__}: {exc}")
                status = 1
                break
            manifest["stages"].append(stage)
        manifest["artifacts"] = {
            str(p.relative_to(self.out)): _sha256(p) for p in sorted(set(self.artifacts)) if p.exists()
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return status


def run_pipeline(cfg: ExperimentConfig, out=None, until: str = "report") -> int:
    warn = resource_warning(cfg)
    if warn:
        warnings.warn(warn, ResourceWarning, stacklevel=2)
        print(f"warning: {warn}", file=sys.stderr)
    return Run(cfg, out if out is not None else cfg.output_dir).execute(until)
