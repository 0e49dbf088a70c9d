import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metalcc.consistency import CCConfig, cc_sweep, consistency_check, threshold_consistency
from metalcc.geometry import ProjectionGeometry, VoxelGrid, max_visitors
from metalcc.metrics import mask_metrics
from metalcc.projector import ConsistencyVolume, MaskStack, reproject_mask
from metalcc.segsim import Blob, blob_footprint

SMALL = ProjectionGeometry(detector_cols=20, detector_rows=20, pixel_pitch=10.0, n_views=30)
# 12 x 12 x 8 voxels of 5 mm sit inside the cone of every view
INNER = VoxelGrid(12, 12, 8, 5.0)


def _cons(values):
    grid = VoxelGrid(len(values), 1, 1, 1.0)
    return ConsistencyVolume(grid, np.array(values, dtype=float).reshape(1, 1, -1))


def test_threshold_examples():
    np.testing.assert_array_equal(threshold_consistency(_cons([0.95, 0.9499, 1.0, 0.0]), 0.95).data.ravel(),
                                  [1, 0, 1, 0])
    assert threshold_consistency(_cons([0.0, 0.3, 1.0]), 0.0).data.all()
    for bad in (-0.01, 1.01):
        with pytest.raises(ValueError):
            threshold_consistency(_cons([0.5]), bad)


def test_config_validation(desk):
    with pytest.raises(ValueError):
        CCConfig(desk["cc_grid"], tau=1.2)
    with pytest.raises(ValueError):
        CCConfig(desk["cc_grid"], reproject_eps=-1.0)
    with pytest.raises(ValueError):
        CCConfig(desk["diagnostic_grid"], diagnostic_grid=desk["cc_grid"])
    cfg = CCConfig(desk["cc_grid"], diagnostic_grid=desk["diagnostic_grid"])
    assert cfg.eps == desk["cc_grid"].voxel_size / 2


def test_inner_grid_fully_visible():
    assert np.all(max_visitors(SMALL, INNER).data == SMALL.n_views)


def test_empty_stack(desk):
    geom = desk["geometry"]
    res = consistency_check(MaskStack(geom, np.zeros(geom.stack_shape, np.uint8)), CCConfig(desk["cc_grid"]))
    assert not res.consistent_masks.data.any()
    assert not res.consistency.value.any()
    assert not res.metal3d.data.any()
    assert res.summary()["output_pixels"] == 0


def _with_blob(masks, blob):
    data = masks.data.copy()
    fp = blob_footprint(blob, masks.geom.detector_shape)
    for v in range(blob.first_view, blob.first_view + blob.n_views):
        data[v][fp] = 1
    return MaskStack(masks.geom, data), fp


def test_three_view_blob_removed(desk, desk_gt):
    gt = desk_gt["in_fov"]
    blob = Blob(first_view=49, n_views=3, row=20.0, col=75.0, radius=4.0, confidence=1.0)
    noisy, fp = _with_blob(gt, blob)
    assert not (gt.data[49:52] & fp).any()  # blob is away from the metal shadow
    for tau in (0.5, 0.95):
        res = consistency_check(noisy, CCConfig(desk["cc_grid"], tau=tau))
        assert not res.consistent_masks.data[49:52][:, fp].any()
    res = consistency_check(noisy, CCConfig(desk["cc_grid"]))
    blob_only = consistency_check(_with_blob(MaskStack(gt.geom, np.zeros_like(gt.data)), blob)[0],
                                  CCConfig(desk["cc_grid"]))
    assert not blob_only.consistent_masks.data.any()
    assert blob_only.consistency.value.max() <= 3 / 100 * 100 / 30 + 1e-12  # every blob voxel is seen by >= 30 views
    assert res.removed_pixels[49:52].sum() >= 3 * fp.sum()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 29), st.integers(1, 27), st.floats(2, 18), st.floats(2, 18), st.floats(1, 6),
       st.sampled_from([0.5, 0.8, 0.95]))
def test_short_lived_component_contributes_nothing(first, length, row, col, radius, tau):
    # fully visible grid, so every voxel's consistency is at most length / n_views
    length = min(length, SMALL.n_views - first)
    short_lived = length < math.ceil(tau * SMALL.n_views)
    blob = Blob(first, length, row, col, radius, 1.0)
    masks, fp = _with_blob(MaskStack(SMALL, np.zeros(SMALL.stack_shape, np.uint8)), blob)
    res = consistency_check(masks, CCConfig(INNER, tau=tau))
    if short_lived:
        assert not res.consistent_masks.data.any()
    assert res.consistency.value.max() <= length / SMALL.n_views + 1e-12


def test_gt_retained_and_output_is_reprojection(desk, desk_gt):
    gt = desk_gt["in_fov"]
    cfg = CCConfig(desk["cc_grid"])
    res = consistency_check(gt, cfg)
    rep = mask_metrics(res.consistent_masks, gt)
    assert rep.per_view["recall"].min() >= 0.95
    again = reproject_mask(res.metal3d, gt.geom, cfg.eps)
    np.testing.assert_array_equal(res.consistent_masks.data, again.data)


def test_idempotent_at_desk_scale(desk, desk_gt):
    cfg = CCConfig(desk["cc_grid"])
    first = consistency_check(desk_gt["in_fov"], cfg).consistent_masks
    second = consistency_check(first, cfg)
    assert second.retained_pixels.sum() >= 0.99 * first.data.sum()


def test_pixel_accounting(desk, desk_gt):
    gt = desk_gt["fragments"]
    rng = np.random.default_rng(0)
    noisy = MaskStack(gt.geom, gt.data | (rng.random(gt.data.shape) < 0.01).astype(np.uint8))
    res = consistency_check(noisy, CCConfig(desk["cc_grid"]))
    before = noisy.data.reshape(100, -1).sum(axis=1)
    after = res.consistent_masks.data.reshape(100, -1).sum(axis=1)
    np.testing.assert_array_equal(res.retained_pixels + res.removed_pixels, before)
    np.testing.assert_array_equal(res.retained_pixels + res.added_pixels, after)
    s = res.summary()
    assert s["retained_pixels"] + s["added_pixels"] == s["output_pixels"]


def test_sweep_matches_single_check_and_is_nested(desk, desk_gt):
    rng = np.random.default_rng(1)
    gt = desk_gt["out_of_fov"]
    masks = MaskStack(gt.geom, gt.data | (rng.random(gt.data.shape) < 0.02).astype(np.uint8))
    cfg = CCConfig(desk["cc_grid"])
    sweep = cc_sweep(masks, cfg, [0.0, 0.5, 0.95, 1.0], keep_intermediates=True)
    single = consistency_check(masks, cfg)
    (_, at95), = [(t, r) for t, r in sweep if t == 0.95]
    np.testing.assert_array_equal(at95.consistent_masks.data, single.consistent_masks.data)
    np.testing.assert_array_equal(at95.metal3d.data, single.metal3d.data)
    for (_, lo), (_, hi) in zip(sweep, sweep[1:]):
        assert np.all(hi.metal3d.data <= lo.metal3d.data)
        assert np.all(hi.consistent_masks.data <= lo.consistent_masks.data)
    assert sweep[-1][1].metal3d is not None
    assert cc_sweep(masks, cfg, [0.95])[0][1].metal3d is None
    with pytest.raises(ValueError):
        cc_sweep(masks, cfg, [0.5, 1.5])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.6),
       st.lists(st.floats(0, 1), min_size=2, max_size=4))
def test_tau_monotone_on_random_masks(seed, density, taus):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(16, 16, 12, 6.0)  # partly outside the cone
    masks = MaskStack(SMALL, (rng.random(SMALL.stack_shape) < density).astype(np.uint8))
    results = cc_sweep(masks, CCConfig(grid), sorted(taus), keep_intermediates=True)
    for (_, lo), (_, hi) in zip(results, results[1:]):
        assert np.all(hi.metal3d.data <= lo.metal3d.data)
        assert np.all(hi.consistent_masks.data <= lo.consistent_masks.data)


def test_unseen_voxels_have_zero_consistency(desk):
    geom = desk["geometry"]
    ones = MaskStack(geom, np.ones(geom.stack_shape, np.uint8))
    res = consistency_check(ones, CCConfig(desk["cc_grid"], tau=0.0))
    seen = res.visitors.max_visits > 0
    assert np.all(res.consistency.value[seen] == 1.0)
    assert np.all(res.consistency.value[~seen] == 0.0)
