"""Pixel-wise segmentation metrics and the threshold x CC experiment grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from metalcc.consistency import consistency_check
from metalcc.segsim import binarize

METRICS = ("iou", "dice", "precision", "recall")
TABLE_HEADER = ("Thres.", "CC", "Avg. IoU", "Avg. Dice", "Avg. Precision", "Avg. Recall")


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


def _as_views(pred, gt):
    p = _array(pred).astype(bool)
    g = _array(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim == 2:
        p, g = p[None], g[None]
    return p.reshape(p.shape[0], -1), g.reshape(g.shape[0], -1)


@dataclass(frozen=True)
class Confusion:
    """Pixel counts; each field is an array over views."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def total(self) -> tuple[int, int, int, int]:
        return tuple(int(a.sum()) for a in (self.tp, self.fp, self.fn, self.tn))


def confusion(pred, gt) -> Confusion:
    p, g = _as_views(pred, gt)
    tp = (p & g).sum(axis=1)
    fp = (p & ~g).sum(axis=1)
    fn = (~p & g).sum(axis=1)
    tn = (~p & ~g).sum(axis=1)
    return Confusion(tp, fp, fn, tn)


def _ratio(num, den, both_empty):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    out[both_empty] = 1.0
    return out


def scores(c: Confusion) -> dict[str, np.ndarray]:
    """Per-view metrics.

    A view where prediction and GT are both empty scores 1 on every metric;
    any other zero denominator scores 0.
    """
    tp, fp, fn = c.tp, c.fp, c.fn
    empty = (tp + fp + fn) == 0
    return {
        "iou": _ratio(tp, tp + fp + fn, empty),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, empty),
        "precision": _ratio(tp, tp + fp, empty),
        "recall": _ratio(tp, tp + fn, empty),
    }


@dataclass
class MetricsReport:
    per_view: dict[str, np.ndarray] = field(repr=False)
    aggregate: dict[str, tuple[float, float]]
    pooled: dict[str, float]
    auc: float | None = None
    n_views: int = 0

    def row(self) -> dict:
        out = {f"{m}_mean": self.aggregate[m][0] for m in METRICS}
        out.update({f"{m}_std": self.aggregate[m][1] for m in METRICS})
        out.update({f"{m}_pooled": self.pooled[m] for m in METRICS})
        out["auc"] = self.auc
        out["n_views"] = self.n_views
        return out

    def to_json_obj(self) -> dict:
        return {
            "per_view": {m: self.per_view[m].tolist() for m in METRICS},
            "aggregate": {m: {"mean": a, "std": s} for m, (a, s) in self.aggregate.items()},
            "pooled": self.pooled,
            "auc": self.auc,
            "auc_granularity": "pooled pixels over the stack",
            "std": "population",
            "n_views": self.n_views,
        }


def mask_metrics(pred, gt, skip_empty: bool = False, auc: float | None = None) -> MetricsReport:
    """Per-view metrics with mean and population std over views.

    ``skip_empty`` drops views where both masks are empty from the
    aggregate. ``pooled`` holds the scan-level metrics from summed counts.
    """
    c = confusion(pred, gt)
    per_view = scores(c)
    keep = np.ones(c.tp.shape, dtype=bool)
    if skip_empty:
        keep = (c.tp + c.fp + c.fn) > 0
    aggregate = {}
    for m in METRICS:
        vals = per_view[m][keep]
        aggregate[m] = (float(vals.mean()), float(vals.std())) if vals.size else (1.0, 0.0)
    tot = Confusion(*(np.array([t]) for t in c.total()))
    pooled = {m: float(v[0]) for m, v in scores(tot).items()}
    return MetricsReport(per_view, aggregate, pooled, auc, int(keep.sum()))


def roc_auc(soft, gt) -> float:
    """Area under the pooled-pixel ROC curve by trapezoidal integration.

    Thresholds are the distinct confidences, so tied scores add half a
    rectangle, i.e. the Mann-Whitney statistic with ties counted 1/2.
    """
    s = _array(soft).astype(np.float64).ravel()
    g = _array(gt).astype(bool).ravel()
    if s.shape != g.shape:
        raise ValueError("soft and gt must have the same shape")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when gt contains a single class")
    order = np.argsort(-s, kind="stable")
    s, g = s[order], g[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(g)[ends].astype(np.float64)
    fps = (ends + 1) - tps
    tps = np.r_[0.0, tps]
    fps = np.r_[0.0, fps]
    area = np.sum(np.diff(fps) * (tps[1:] + tps[:-1])) / 2
    return float(area / (n_pos * n_neg))


@dataclass
class GridRow:
    threshold: float
    cc: bool
    report: MetricsReport


def experiment_grid(soft, gt, thresholds, ccfg, skip_empty: bool = False,
                    keep_results: bool = False):
    """Evaluate every binarization threshold with and without the CC.

    Returns one row per (threshold, cc) pair; with ``keep_results`` also a dict of
    the binarized and CC-processed stacks keyed by threshold.
    """
    try:
        auc = roc_auc(soft, gt)
    except ValueError:
        auc = None
    rows, kept = [], {}
    for thr in thresholds:
        masks = binarize(soft, thr)
        rows.append(GridRow(thr, False, mask_metrics(masks, gt, skip_empty, auc)))
        result = consistency_check(masks, ccfg, keep_intermediates=keep_results)
        rows.append(GridRow(thr, True, mask_metrics(result.consistent_masks, gt, skip_empty, auc)))
        if keep_results:
            kept[thr] = (masks, result)
    return (rows, kept) if keep_results else rows


def _fmt_threshold(t: float) -> str:
    return f"{t:g}"


def format_table(rows: list[GridRow]) -> str:
    """Aligned plain-text table in the Thres./CC/IoU/Dice/Precision/Recall layout."""
    body = []
    for row in rows:
        cells = [_fmt_threshold(row.threshold), "yes" if row.cc else "no"]
        cells += [f"{row.report.aggregate[m][0]:.3f}±{row.report.aggregate[m][1]:.3f}" for m in METRICS]
        body.append(cells)
    widths = [max(len(r[i]) for r in [TABLE_HEADER, *body]) for i in range(len(TABLE_HEADER))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(TABLE_HEADER, widths)).rstrip()]
    lines.append("-" * len(lines[0]))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in body]
    return "\n".join(lines) + "\n"


def rows_to_json(rows: list[GridRow]) -> list[dict]:
    return [{"threshold": r.threshold, "cc": r.cc, **r.report.to_json_obj()} for r in rows]


def rows_to_csv(rows: list[GridRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    fields = [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    writer.writerow(["threshold", "cc", *fields, "auc"])
    for r in rows:
        agg = r.report.aggregate
        vals = [f"{agg[m][k]:.6f}" for m in METRICS for k in (0, 1)]
        auc = "" if r.report.auc is None else f"{r.report.auc:.6f}"
        writer.writerow([_fmt_threshold(r.threshold), "yes" if r.cc else "no", *vals, auc])
    return buf.getvalue()
