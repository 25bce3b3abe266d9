import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanerl.errors import InvalidArgument, OutOfCorridor
from lanerl.track import (
    DEFAULT_LENGTH,
    cartesian_to_frenet,
    frenet_to_cartesian,
    generate_track,
    lane_center,
    lane_of,
    load_track_csv,
    save_track_csv,
)


@pytest.fixture(scope="module")
def track():
    return generate_track(0, DEFAULT_LENGTH)


def test_default_track_length(track):
    assert track.total_length == 6946.0


@pytest.mark.parametrize("length", [0, -5.0, 999.0, math.nan, math.inf])
def test_bad_length_rejected(length):
    with pytest.raises(InvalidArgument):
        generate_track(0, length)


def test_closure_short_track():
    t = generate_track(7, 2000.0)
    x0, y0 = t.reference(0.0)
    x1, y1 = t.reference(2000.0)
    assert math.hypot(x1 - x0, y1 - y0) < 1e-6


def test_waypoint_invariants(track):
    wp = track.waypoints
    assert np.all(np.diff(wp[:, 2]) > 0)
    assert wp[-1, 2] < track.total_length
    assert np.allclose(np.hypot(wp[:, 3], wp[:, 4]), 1.0, atol=1e-9)


def test_track_is_deterministic():
    assert np.array_equal(generate_track(3, 3000.0).waypoints, generate_track(3, 3000.0).waypoints)
    assert not np.array_equal(generate_track(3, 3000.0).waypoints, generate_track(4, 3000.0).waypoints)


def test_zero_offset_is_reference(track):
    assert frenet_to_cartesian(track, 0.0, 0.0) == pytest.approx(tuple(track.waypoints[0, :2]), abs=1e-9)
    a = frenet_to_cartesian(track, track.total_length, 0.0)
    b = frenet_to_cartesian(track, 0.0, 0.0)
    assert math.dist(a, b) < 1e-6


def test_offset_along_normal_matches_finite_difference(track):
    h = 1e-4
    x0, y0 = track.reference(100.0 - h)
    x1, y1 = track.reference(100.0 + h)
    tx, ty = x1 - x0, y1 - y0
    g = math.hypot(tx, ty)
    rx, ry = track.reference(100.0)
    want = (rx + 2.0 * ty / g, ry - 2.0 * tx / g)
    assert math.dist(frenet_to_cartesian(track, 100.0, 2.0), want) < 1e-6


def test_round_trip_example(track):
    x, y = frenet_to_cartesian(track, 500.0, 6.0)
    s, d = cartesian_to_frenet(track, x, y)
    assert s == pytest.approx(500.0, abs=1e-6) and d == pytest.approx(6.0, abs=1e-6)


def test_reference_start_maps_to_origin(track):
    s, d = cartesian_to_frenet(track, *track.reference(0.0))
    assert min(s, track.total_length - s) < 1e-6 and abs(d) < 1e-6


def test_far_point_out_of_corridor(track):
    x, y = frenet_to_cartesian(track, 300.0, 0.0)
    nx, ny = track.normal(300.0)
    with pytest.raises(OutOfCorridor):
        cartesian_to_frenet(track, x + 50 * nx, y + 50 * ny)


@settings(max_examples=300, deadline=None)
@given(s=st.floats(0, DEFAULT_LENGTH, exclude_max=True), d=st.floats(-10, 10))
def test_round_trip_property(track, s, d):
    s2, d2 = cartesian_to_frenet(track, *frenet_to_cartesian(track, s, d))
    ds = abs(s2 - s)
    assert min(ds, track.total_length - ds) < 1e-6
    assert abs(d2 - d) < 1e-6


def test_continuity_across_wrap(track):
    eps = 1e-7
    a = frenet_to_cartesian(track, track.total_length - eps, 6.0)
    b = frenet_to_cartesian(track, eps, 6.0)
    assert math.dist(a, b) < 1e-5


def test_lane_geometry():
    assert [lane_center(i) for i in range(3)] == [2.0, 6.0, 10.0]
    assert [lane_of(d) for d in (0.0, 3.99, 4.0, 7.9, 8.0, 12.0)] == [0, 0, 1, 1, 2, 2]


def test_csv_round_trip(tmp_path, track):
    path = tmp_path / "track.csv"
    save_track_csv(track, path)
    loaded = load_track_csv(path, track.total_length)
    assert np.array_equal(loaded.waypoints, track.waypoints)
    body = path.read_text().splitlines()[1:]
    (tmp_path / "bare.csv").write_text("\n".join(body) + "\n")
    bare = load_track_csv(tmp_path / "bare.csv")
    assert np.array_equal(bare.waypoints, track.waypoints)
    assert bare.total_length == pytest.approx(track.total_length, rel=1e-3)
