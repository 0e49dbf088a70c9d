import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metalcc.geometry import (ProjectionGeometry, VoxelGrid, auto_cc_grid, max_visitors,
                              project_point, view_angle)
from oracles import pinhole

DESK = ProjectionGeometry(detector_cols=96, detector_rows=96, pixel_pitch=3.125, n_views=100)
coords = st.floats(-150, 150, allow_nan=False)
angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def test_view_angle_examples():
    g = ProjectionGeometry(scan_arc=200, start_angle=0, n_views=401)
    assert view_angle(g, 0) == 0.0
    assert view_angle(g, 400) == pytest.approx(math.radians(200), rel=1e-15)
    assert view_angle(g, 200) == pytest.approx(math.radians(100), rel=1e-15)


def test_view_angle_single_view_and_range():
    g = ProjectionGeometry(n_views=1, start_angle=30)
    assert view_angle(g, 0) == pytest.approx(math.radians(30))
    with pytest.raises(IndexError):
        view_angle(g, 1)
    with pytest.raises(IndexError):
        view_angle(DESK, -1)


@given(st.integers(2, 500), st.floats(1, 360), st.floats(-180, 180))
def test_view_angle_strictly_increasing(n, arc, start):
    g = ProjectionGeometry(n_views=n, scan_arc=arc, start_angle=start)
    assert np.all(np.diff(g.angles()) > 0)


@pytest.mark.parametrize("kwargs", [
    {"source_axis_distance": 0},
    {"source_detector_distance": 600},
    {"n_views": 0},
    {"detector_cols": 0},
    {"pixel_pitch": 0},
    {"scan_arc": 0},
    {"scan_arc": 361},
])
def test_geometry_invariants_rejected(kwargs):
    with pytest.raises(ValueError):
        ProjectionGeometry(**kwargs)


@given(angles)
def test_isocenter_maps_to_detector_center(a):
    u, v, inside = project_point(DESK, a, (0, 0, 0))
    assert (u, v, inside) == (48.0, 48.0, True)


def test_axial_displacement_similar_triangles():
    d = 10.0
    u, v, inside = project_point(DESK, 0.7, (0, 0, d))
    # magnification SDD/SAD applies on the rotation axis at every angle
    assert u == pytest.approx(48.0, abs=1e-12)
    assert v == pytest.approx(48.0 + d * (1164.0 / 622.0) / 3.125, rel=1e-12)
    assert inside


def test_far_points_not_inside():
    assert not project_point(DESK, 0.0, (0, 0, 500)).inside
    assert not project_point(DESK, 0.0, (0, 400, 0)).inside
    # source sits at +x for angle 0; points at or behind the source plane are invalid
    assert not project_point(DESK, 0.0, (622, 0, 0)).inside
    assert not project_point(DESK, 0.0, (900, 0, 0)).inside
    with pytest.raises(ValueError):
        project_point(DESK, 0.0, (math.nan, 0, 0))


@settings(max_examples=200)
@given(coords, coords, coords, angles)
def test_project_point_matches_pinhole_oracle(x, y, z, a):
    u, v, inside = project_point(DESK, a, (x, y, z))
    ou, ov, oinside = pinhole(DESK, a, (x, y, z))
    assert u == pytest.approx(ou, rel=1e-9, abs=1e-9)
    assert v == pytest.approx(ov, rel=1e-9, abs=1e-9)
    if abs(ou) > 1e-6 and abs(ou - 96) > 1e-6 and abs(ov) > 1e-6 and abs(ov - 96) > 1e-6:
        assert inside == oinside


@settings(max_examples=200)
@given(coords, coords, coords, angles, st.floats(-math.pi, math.pi))
def test_rotational_consistency(x, y, z, a, delta):
    c, s = math.cos(-delta), math.sin(-delta)
    rotated = (c * x - s * y, s * x + c * y, z)
    u0, v0, in0 = project_point(DESK, a, (x, y, z))
    u1, v1, in1 = project_point(DESK, a + delta, rotated)
    assert u1 == pytest.approx(u0, rel=1e-9, abs=1e-9)
    assert v1 == pytest.approx(v0, rel=1e-9, abs=1e-9)


def test_inside_flag_boundaries():
    g = ProjectionGeometry(detector_cols=10, detector_rows=10, pixel_pitch=1.0, n_views=1)
    mag = g.magnification
    # a point on the axis maps to v = rows/2 + z*mag/pitch
    assert project_point(g, 0.0, (0, 0, -5 / mag)).inside  # v == 0
    assert not project_point(g, 0.0, (0, 0, 5 / mag * 1.0000001)).inside  # v just above rows


def test_max_visitors_examples():
    g = ProjectionGeometry(detector_cols=32, detector_rows=32, pixel_pitch=3.125, n_views=40)
    grid = VoxelGrid(5, 5, 5, 60.0)  # extends far beyond the cone
    counts = max_visitors(g, grid).data
    assert counts[2, 2, 2] == g.n_views
    assert counts[0, 0, 0] == 0  # corner at z = +-120 mm sits outside the cone
    assert counts.min() >= 0 and counts.max() <= g.n_views


def test_max_visitors_brute_force(small_geom):
    grid = VoxelGrid(9, 9, 5, 25.0)
    counts = max_visitors(small_geom, grid).data
    xs, ys, zs = grid.axes()
    angles = small_geom.angles()
    expected = np.zeros(grid.shape, dtype=int)
    for k, z in enumerate(zs):
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                expected[k, j, i] = sum(pinhole(small_geom, a, (x, y, z))[2] for a in angles)
    np.testing.assert_array_equal(counts, expected)
    partial = (expected > 0) & (expected < small_geom.n_views)
    assert partial.any()


def test_grid_json_round_trip_and_unknown_keys():
    grid = VoxelGrid(4, 5, 6, 0.5, (1.0, 2.0, 3.0))
    assert VoxelGrid.from_dict(json.loads(json.dumps(grid.to_dict()))) == grid
    assert ProjectionGeometry.from_dict(json.loads(json.dumps(DESK.to_dict()))) == DESK
    with pytest.raises(ValueError, match="unknown"):
        ProjectionGeometry.from_dict({**DESK.to_dict(), "tilt": 0.0})
    with pytest.raises(ValueError, match="unknown"):
        VoxelGrid.from_dict({**grid.to_dict(), "spacing": 1.0})


def test_grid_geometry_helpers():
    grid = VoxelGrid(4, 2, 2, 1.0, (10.0, 0.0, 0.0))
    xs, ys, zs = grid.axes()
    np.testing.assert_allclose(xs, [8.5, 9.5, 10.5, 11.5])
    np.testing.assert_allclose(zs, [-0.5, 0.5])
    assert grid.shape == (2, 2, 4)
    big = VoxelGrid(96, 96, 96, 2.5)
    assert big.contains(VoxelGrid(64, 64, 64, 2.5))
    assert not VoxelGrid(64, 64, 64, 2.5).contains(big)
    with pytest.raises(ValueError):
        VoxelGrid(0, 1, 1, 1.0)
    with pytest.raises(ValueError):
        VoxelGrid(1, 1, 1, -1.0)


def test_auto_cc_grid_covers_fov_and_reaches_past_it():
    grid = auto_cc_grid(DESK, 2.5)
    assert grid.contains(VoxelGrid(64, 64, 64, 2.5))
    assert grid.nx % 2 == 0
    counts = max_visitors(DESK, grid).data
    assert counts.max() == DESK.n_views
    assert (counts < DESK.n_views).any()
