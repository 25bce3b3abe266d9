import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanerl.errors import InvalidArgument, PlannerStarvation
from lanerl.planning import Action, PlannedPath, maneuver_for, next_path_point
from lanerl.sim import (
    DT,
    MPH,
    NpcBehavior,
    VehicleState,
    detect_collision,
    make_world,
    spawn_npcs,
    step_world,
    vehicles_collide,
)
from lanerl.track import generate_track


@pytest.fixture(scope="module")
def track():
    return generate_track(0)


def hold_path(world):
    e = world.ego
    x, y = world.ego_xy
    one = lambda v: np.array([v])  # noqa: E731
    return PlannedPath(one(x), one(y), one(e.s), one(e.d), one(0.0), one(0.0), one(0.0), e.lane, "keep")


def test_spawn_counts(track):
    assert spawn_npcs(track, 0, 0) == []
    with pytest.raises(InvalidArgument):
        spawn_npcs(track, 0, 13)


def test_spawn_twelve_respects_gaps(track):
    npcs = spawn_npcs(track, 1, 12)
    assert len(npcs) == 12
    L = track.total_length
    for i, a in enumerate(npcs):
        assert a.d in (2.0, 6.0, 10.0)
        assert 30.0 <= a.speed <= 48.0
        for b in npcs[i + 1:]:
            if a.lane == b.lane:
                gap = abs(a.s - b.s)
                assert min(gap, L - gap) >= 30.0
    assert spawn_npcs(track, 1, 12) == npcs


def test_npc_cruise_advance(track):
    ego = VehicleState(-1, 3000.0, 6.0, 0.0)
    npc = VehicleState(0, 100.0, 2.0, 40.0)
    w = step_world(make_world(track, ego, [npc]), hold_path(make_world(track, ego, [npc])))
    assert w.npc_s[0] - 100.0 == pytest.approx(40 * 0.44704 * 0.02, abs=1e-12)


def test_stationary_ego_has_zero_speed(track):
    w = make_world(track, VehicleState(-1, 10.0, 6.0, 0.0))
    for _ in range(5):
        w = step_world(w, hold_path(w))
    assert w.ego.speed == 0.0


def test_follower_slows_behind_slower_leader(track):
    ego = VehicleState(-1, 3000.0, 6.0, 0.0)
    follower = VehicleState(0, 100.0, 2.0, 45.0)
    leader = VehicleState(1, 110.0, 2.0, 32.0)
    w = make_world(track, ego, [follower, leader])
    w2 = step_world(w, hold_path(w))
    assert w2.npc_speed[0] < 45.0
    assert 45.0 - w2.npc_speed[0] <= 5.0 * DT / MPH + 1e-12


def test_empty_segment_starves(track):
    w = make_world(track, VehicleState(-1, 10.0, 6.0, 0.0))
    empty = PlannedPath(*(np.array([]) for _ in range(7)), target_lane=1, maneuver="keep")
    with pytest.raises(PlannerStarvation):
        step_world(w, empty)
    with pytest.raises(InvalidArgument):
        step_world(w, hold_path(w), dt=0.05)


def test_collision_examples(track):
    ego = VehicleState(-1, 500.0, 6.0, 30.0)
    same = make_world(track, ego, [VehicleState(0, 500.0, 6.0, 30.0)])
    adjacent = make_world(track, ego, [VehicleState(0, 500.0, 10.0, 30.0)])
    ahead = make_world(track, ego, [VehicleState(0, 506.0, 6.0, 30.0)])
    assert detect_collision(same)
    assert not detect_collision(adjacent)
    assert not detect_collision(ahead)


def test_collision_across_wrap(track):
    L = track.total_length
    w = make_world(track, VehicleState(-1, L - 1.0, 6.0, 0.0), [VehicleState(0, 2.0, 6.5, 30.0)])
    assert detect_collision(w)


@given(
    s1=st.floats(0, 6945.9), s2=st.floats(0, 6945.9),
    d1=st.floats(0, 12), d2=st.floats(0, 12),
)
def test_collision_symmetric(s1, s2, d1, d2):
    a, b = VehicleState(0, s1, d1, 0.0), VehicleState(1, s2, d2, 0.0)
    assert vehicles_collide(a, b, 6946.0) == vehicles_collide(b, a, 6946.0)


def test_behavior_validation():
    with pytest.raises(InvalidArgument):
        NpcBehavior(cruise_speed=55.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), action=st.sampled_from([Action.KEEP, Action.LEFT, Action.RIGHT]))
def test_rollout_invariants(track, seed, action):
    """Wrapped s, constant NPC count, tick/time bookkeeping and the ego speed cap."""
    npcs = spawn_npcs(track, seed, 12, span=(40.0, 640.0))
    w = make_world(track, VehicleState(-1, track.total_length - 20.0, 6.0, 45.0), npcs, ref_speed=45.0)
    m = maneuver_for(w, action)
    for _ in range(m.n_ticks):
        w = step_world(w, next_path_point(w, m))
        L = track.total_length
        assert 0.0 <= w.ego.s < L
        assert np.all((w.npc_s >= 0.0) & (w.npc_s < L))
        assert w.npc_count == 12
        assert abs(w.tick * DT - w.time) < 1e-9
        assert 0.0 <= w.ego.speed < 50.0


def test_stepping_is_deterministic(track):
    def run():
        npcs = spawn_npcs(track, 4, 12)
        w = make_world(track, VehicleState(-1, 0.0, 6.0, 0.0), npcs, rng=np.random.default_rng(4))
        for _ in range(200):
            w = step_world(w, next_path_point(w, None))
        return w.ego, w.npc_s.tobytes(), w.npc_speed.tobytes()

    assert run() == run()


def test_npc_lane_change_option_moves_blocked_npc(track):
    ego = VehicleState(-1, 3000.0, 6.0, 0.0)
    slow = VehicleState(1, 112.0, 2.0, 30.0)
    fast = VehicleState(0, 100.0, 2.0, 45.0)
    beh = (NpcBehavior(45.0, lane_change_enabled=True), NpcBehavior(30.0))
    w = make_world(track, ego, [fast, slow], beh)
    for _ in range(200):
        w = step_world(w, hold_path(w))
    assert math.isclose(w.npc_d[0], 6.0)
    assert w.npc_d[1] == 2.0
