from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from oracles import grid_oracle, random_scene

from lanerl.env import (
    EnvConfig,
    Event,
    HighwayEnv,
    RewardParams,
    car_rows,
    classify_decision,
    compute_reward,
    encode_state,
    env_step,
    reset_episode,
    transition_record,
)
from lanerl.errors import EpisodeDone, InvalidArgument
from lanerl.planning import Action
from lanerl.sim import VehicleState, make_world
from lanerl.track import generate_track


@pytest.fixture(scope="module")
def track():
    return generate_track(0)


def scene(track, ego_speed, lane=1, npcs=(), s=200.0):
    return make_world(track, VehicleState(-1, s, 2.0 + 4.0 * lane, ego_speed), npcs)


# -- encoding -----------------------------------------------------------------
def test_empty_road_encoding(track):
    grid, aux = encode_state(scene(track, 30.0))
    assert grid.shape == (45, 3)
    assert np.count_nonzero(grid != 1.0) == 4
    assert np.all(grid[:, 1][grid[:, 1] != 1.0] == pytest.approx(0.30))
    assert np.all(grid[:, [0, 2]] == 1.0)
    assert np.allclose(aux, (0.6, 1.0, 1.0))


def test_lane_flags(track):
    assert tuple(encode_state(scene(track, 10.0, lane=0))[1][1:]) == (0.0, 1.0)
    assert tuple(encode_state(scene(track, 10.0, lane=2))[1][1:]) == (1.0, 0.0)


def test_npc_cells(track):
    grid, _ = encode_state(scene(track, 30.0, npcs=[VehicleState(0, 220.0, 10.0, 44.0)]))
    rows = np.flatnonzero(grid[:, 2] != 1.0)
    assert len(rows) == 4 and np.all(np.diff(rows) == 1)
    assert np.all(grid[rows, 2] == pytest.approx(-0.44))
    lo, hi = 60 - 2 * (rows[-1] + 1), 60 - 2 * rows[0]
    assert lo <= 17.25 and 22.75 <= hi


@pytest.mark.parametrize("rel", [-40.0, -30.0, -29.0, 0.0, 1.0, 58.9, 59.99, 60.0, 100.0])
def test_car_rows_clip(rel):
    r = car_rows(rel)
    assert 0 <= r.start and r.stop <= 45 and len(r) <= 4


def test_nearest_car_wins_overlap(track):
    near = VehicleState(0, 210.0, 6.0, 40.0)
    far = VehicleState(1, 213.0, 6.0, 33.0)
    grid, _ = encode_state(scene(track, 30.0, npcs=[far, near]))
    assert np.all(grid[car_rows(10.0), 1] == pytest.approx(-0.40))


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 2**32 - 1))
def test_encoder_matches_oracle(track, seed):
    world = random_scene(np.random.default_rng(seed), track, spread=(-40.0, 70.0))
    grid, aux = encode_state(world)
    assert np.array_equal(grid, grid_oracle(world))
    ego_cells = grid[(grid >= 0) & (grid != 1.0)]
    assert len(ego_cells) <= 4
    assert np.all((grid == 1.0) | ((grid >= 0) & (grid < 0.5)) | ((grid <= 0) & (grid > -0.5)))
    assert 0.0 <= aux[0] < 1.0


# -- decisions and reward -------------------------------------------------------
def test_classification_examples(track):
    lead = [VehicleState(0, 230.0, 6.0, 40.0)]
    assert classify_decision(scene(track, 30.0, lane=0), Action.LEFT) == Event.ILLEGAL_CHANGE
    assert classify_decision(scene(track, 30.0, lane=1), Action.KEEP) == Event.NORMAL
    assert classify_decision(scene(track, 30.0, lane=1), Action.LEFT) == Event.INVALID_CHANGE
    assert classify_decision(scene(track, 30.0, lane=1, npcs=lead), Action.LEFT) == Event.LEGAL_CHANGE
    far_lead = [VehicleState(0, 261.0, 6.0, 40.0)]
    assert classify_decision(scene(track, 30.0, lane=1, npcs=far_lead), Action.RIGHT) == Event.INVALID_CHANGE


@pytest.mark.parametrize("lane", [0, 1, 2])
@pytest.mark.parametrize("action", list(Action))
def test_illegality_depends_only_on_lane(track, lane, action):
    illegal = (lane == 0 and action == Action.LEFT) or (lane == 2 and action == Action.RIGHT)
    for npcs in ([], [VehicleState(0, 215.0, 2.0 + 4.0 * lane, 35.0)]):
        got = classify_decision(scene(track, 30.0, lane=lane, npcs=npcs), action)
        assert (got == Event.ILLEGAL_CHANGE) == illegal


def test_reward_examples():
    assert compute_reward(Event.COLLISION, 47.0) == -10.0
    assert compute_reward(Event.ILLEGAL_CHANGE, 47.0) == -5.0
    assert compute_reward(Event.INVALID_CHANGE, 47.0) == -3.0
    assert compute_reward(Event.NORMAL, 25.0) == 0.0
    assert compute_reward(Event.LEGAL_CHANGE, 45.0) == pytest.approx(0.5, abs=1e-12)
    assert compute_reward(Event.NORMAL, 10.0) == pytest.approx(-0.6, abs=1e-12)


@given(v=st.floats(0, 50, exclude_max=True), event=st.sampled_from(list(Event)))
def test_reward_bounds(v, event):
    if event == Event.LAP_COMPLETE:
        event = Event.NORMAL
    r = compute_reward(event, v)
    assert -10.0 <= r < 1.0
    if event == Event.NORMAL:
        assert -1.0 <= r < 1.0
    assert r == compute_reward(event, v)


def test_reward_params_ordering():
    with pytest.raises(InvalidArgument):
        RewardParams(r_ch2=-6.0).validate()


# -- stepping -------------------------------------------------------------------
def test_steady_keep_on_empty_road(track):
    w = scene(track, 49.5)
    res = env_step(w, Action.KEEP)
    assert res.ticks == 50 and not res.done and res.event == Event.NORMAL
    assert res.reward == pytest.approx(0.98, abs=1e-6)


def test_shield_cancels_change_into_occupied_lane(track):
    npcs = [VehicleState(0, 240.0, 6.0, 40.0), VehicleState(1, 200.0, 2.0, 40.0)]
    res = env_step(scene(track, 40.0, npcs=npcs), Action.LEFT, EnvConfig())
    assert res.executed_action == Action.KEEP and res.shield_cancelled
    assert res.event == Event.NORMAL and not res.lane_changed
    assert res.reward == pytest.approx(compute_reward(Event.NORMAL, res.avg_speed))


def test_unshielded_change_into_abreast_npc_collides(track):
    npcs = [VehicleState(0, 240.0, 6.0, 40.0), VehicleState(1, 200.0, 2.0, 40.0)]
    res = env_step(scene(track, 40.0, npcs=npcs), Action.LEFT, EnvConfig(shield_enabled=False))
    assert res.event == Event.COLLISION and res.reward == -10.0 and res.done
    assert res.ticks < 150


def test_legal_change_completes(track):
    npcs = [VehicleState(0, 240.0, 6.0, 40.0)]
    res = env_step(scene(track, 40.0, npcs=npcs), Action.RIGHT)
    assert res.event == Event.LEGAL_CHANGE and res.lane_changed and res.ticks == 150
    assert res.world.ego.lane == 2
    assert res.reward == pytest.approx(0.04 * (res.avg_speed - 25) - 0.3)


def test_illegal_change_executes_keep(track):
    res = env_step(scene(track, 40.0, lane=2), Action.RIGHT)
    assert res.event == Event.ILLEGAL_CHANGE and res.executed_action == Action.KEEP
    assert res.reward == -5.0 and res.ticks == 50 and res.world.ego.lane == 2


def test_lap_completion_terminates(track):
    w = replace(scene(track, 49.5), progress=track.total_length - 5.0)
    res = env_step(w, Action.KEEP)
    assert res.event == Event.LAP_COMPLETE and res.done


def test_reset_examples():
    w1, g1, a1 = reset_episode(5)
    w2, g2, a2 = reset_episode(5)
    assert np.array_equal(g1, g2) and np.array_equal(w1.npc_s, w2.npc_s)
    assert w1.ego.s == 0.0 and w1.ego.lane == 1 and w1.ego.speed == 0.0
    assert np.count_nonzero(g1 == 0.0) == 4
    w3, _, _ = reset_episode(6)
    assert not np.array_equal(w1.npc_s, w3.npc_s)


def test_env_refuses_finished_episode(track):
    env = HighwayEnv(EnvConfig(npc_count=0))
    with pytest.raises(EpisodeDone):
        env.step(Action.KEEP)
    env.reset(0)
    env.world = replace(env.world, progress=track.total_length - 0.01)
    res = env.step(Action.KEEP)
    assert res.done
    with pytest.raises(EpisodeDone):
        env.step(Action.KEEP)


def test_done_iff_terminal_event():
    env = HighwayEnv(EnvConfig(shield_enabled=False))
    _ = env.reset(3)
    rng = np.random.default_rng(3)
    for _ in range(60):
        res = env.step(Action(int(rng.integers(3))))
        assert res.done == (res.event in (Event.COLLISION, Event.LAP_COMPLETE))
        rec = transition_record(res, Action.KEEP)
        assert set(rec) == {"tick", "s", "d", "speed", "action", "executed_action", "reward", "event", "shield_cancelled"}
        if res.done:
            break
