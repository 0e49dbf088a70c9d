"""Command-line entry point: ``metalcc <subcommand> [options]``.

Numba reads its thread cap at import time, so options are parsed before any
compiled module is loaded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

SUBCOMMANDS = {
    "phantom": "voxelize the paired with/without-metal scene",
    "project": "forward-project the pair and derive GT masks by subtraction",
    "segment-sim": "simulate soft segmentations with false positives and dropouts",
    "cc": "run the consistency check (on --masks, or on simulated masks)",
    "metrics": "score --pred against --gt, or run the full threshold x CC grid",
    "pipeline": "run every stage and render the report figures",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metalcc",
        description="Simulate projection-domain metal masks, run the consistency check and score it.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config; fields override the profile")
        p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed for the simulation")
        p.add_argument("--profile", choices=("desk", "paper"), default="desk",
                       help="desk: 96^2 x 100 views (default); paper: 976^2 x 400 views, 920^3 CC grid")
        p.add_argument("--threads", type=int, help="worker threads; never changes results")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "cc":
            p.add_argument("--masks", type=Path, help="binary mask stack (ArrayFile) to check")
        if name == "metrics":
            p.add_argument("--pred", type=Path, help="predicted mask stack (ArrayFile)")
            p.add_argument("--gt", type=Path, help="ground-truth mask stack (ArrayFile)")
            p.add_argument("--soft", type=Path, help="soft mask stack for AUC (ArrayFile)")
    return parser


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be >= 1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _config(args):
    from metalcc.pipeline import load_config, read_config_file

    overrides = read_config_file(args.config) if args.config else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    return load_config(overrides, args.profile)


def _cc_on_file(cfg, args) -> int:
    from metalcc.consistency import consistency_check
    from metalcc.geometry import ProjectionGeometry
    from metalcc.io import export_pgm, read_array, write_array
    from metalcc.projector import MaskStack

    data, header = read_array(args.masks, expected_semantic="mask")
    geom = ProjectionGeometry.from_dict(header["geometry"]) if "geometry" in header else cfg.geometry
    result = consistency_check(MaskStack(geom, data), cfg.cc_config())
    out = Path(cfg.output_dir)
    write_array(out / "cc_masks", result.consistent_masks, "mask")
    write_array(out / "cc_consistency", result.consistency, "consistency")
    write_array(out / "cc_metal3d", result.metal3d, "mask")
    for v in cfg.previews():
        export_pgm(result.consistent_masks.data[v], out / "pgm" / f"post_cc_v{v:03d}.pgm")
    summary = {**result.summary(), "retained_per_view": result.retained_pixels.tolist(),
               "removed_per_view": result.removed_pixels.tolist()}
    (out / "cc_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(json.dumps(result.summary()))
    return 0


def _metrics_on_files(cfg, args) -> int:
    from metalcc.io import read_array
    from metalcc.metrics import mask_metrics, roc_auc

    if args.pred is None or args.gt is None:
        raise SystemExit("metrics needs both --pred and --gt (or neither)")
    pred, _ = read_array(args.pred, expected_semantic="mask")
    gt, _ = read_array(args.gt, expected_shape=pred.shape, expected_semantic="mask")
    auc = None
    if args.soft is not None:
        soft, _ = read_array(args.soft, expected_shape=pred.shape, expected_semantic="soft_mask")
        auc = roc_auc(soft, gt)
    report = mask_metrics(pred, gt, cfg.skip_empty, auc)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report.to_json_obj(), indent=1, sort_keys=True) + "\n")
    for m, (mean, std) in report.aggregate.items():
        print(f"{m:<10} {mean:.3f}±{std:.3f}")
    if auc is not None:
        print(f"{'auc':<10} {auc:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)

    from metalcc.pipeline import run_pipeline

    try:
        cfg = _config(args)
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    if args.command == "cc" and args.masks is not None:
        return _cc_on_file(cfg, args)
    if args.command == "metrics" and (args.pred is not None or args.gt is not None):
        return _metrics_on_files(cfg, args)
    until = "report" if args.command == "pipeline" else args.command
    status = run_pipeline(cfg, until=until)
    out = Path(cfg.output_dir)
    if status == 0 and until in ("metrics", "report"):
        print((out / "metrics.txt").read_text(), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
