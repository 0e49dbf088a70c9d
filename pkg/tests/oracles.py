"""Slow, independent reference implementations used as test oracles.

Nothing here calls into metalcc's kernels; the geometry is rebuilt from
rotation matrices and explicit ray/plane and ray/box intersections.
"""

import math

import numpy as np


def frame(geom, angle):
    """Source, detector center and detector axes at a gantry angle."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # rotation by -angle
    src = rot @ np.array([geom.source_axis_distance, 0.0, 0.0])
    det = rot @ np.array([geom.source_axis_distance - geom.source_detector_distance, 0.0, 0.0])
    e_u = rot @ np.array([0.0, 1.0, 0.0])
    e_v = np.array([0.0, 0.0, 1.0])
    return src, det, e_u, e_v


def pinhole(geom, angle, p):
    """(u, v, inside) by intersecting the source->p ray with the detector plane."""
    src, det, e_u, e_v = frame(geom, angle)
    p = np.asarray(p, dtype=float)
    normal = (det - src) / np.linalg.norm(det - src)
    d = p - src
    denom = d @ normal
    if denom <= 0:
        return math.nan, math.nan, False
    hit = src + d * ((det - src) @ normal) / denom
    u = geom.detector_cols / 2 + (hit - det) @ e_u / geom.pixel_pitch
    v = geom.detector_rows / 2 + (hit - det) @ e_v / geom.pixel_pitch
    inside = 0 <= u < geom.detector_cols and 0 <= v < geom.detector_rows
    return u, v, inside


def pixel_ray(geom, angle, row, col):
    src, det, e_u, e_v = frame(geom, angle)
    u_mm = (col + 0.5 - geom.detector_cols / 2) * geom.pixel_pitch
    v_mm = (row + 0.5 - geom.detector_rows / 2) * geom.pixel_pitch
    return src, det + u_mm * e_u + v_mm * e_v


def segment_box_length(a, b, lo, hi):
    """Length of segment a->b inside the axis-aligned box [lo, hi] (slab method)."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for k in range(3):
        if d[k] == 0:
            if not lo[k] < a[k] < hi[k]:
                return 0.0
            continue
        ta, tb = (lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return max(0.0, t1 - t0) * float(np.linalg.norm(d))


def brute_forward(vol, geom):
    """Sum of value x chord over every voxel box, for every pixel ray."""
    grid = vol.grid
    lo0 = grid.origin
    h = grid.voxel_size
    out = np.zeros(geom.stack_shape)
    nz_idx = np.argwhere(vol.data != 0)
    for view in range(geom.n_views):
        angle = math.radians(geom.start_angle + (view * geom.scan_arc / (geom.n_views - 1)
                                                 if geom.n_views > 1 else 0.0))
        for r in range(geom.detector_rows):
            for c in range(geom.detector_cols):
                a, b = pixel_ray(geom, angle, r, c)
                total = 0.0
                for k, j, i in nz_idx:
                    lo = lo0 + np.array([i, j, k]) * h
                    total += vol.data[k, j, i] * segment_box_length(a, b, lo, lo + h)
                out[view, r, c] = total
    return out


def pairwise_auc(scores, labels):
    """Mann-Whitney AUC by comparing every positive with every negative."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def loop_confusion(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.asarray(pred).ravel().tolist(), np.asarray(gt).ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
