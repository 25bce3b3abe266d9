"""Decision-level MDP: grid encoding, decision classification, reward, stepping."""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EpisodeDone, InvalidArgument
from .planning import (
    Action,
    PlannerConfig,
    ShieldConfig,
    SpeedControlConfig,
    ego_leader,
    maneuver_for,
    next_path_point,
    shield,
)
from .sim import (
    MAX_NPCS,
    RecyclePolicy,
    VehicleState,
    WorldState,
    detect_collision,
    make_world,
    spawn_npcs,
    step_world,
)
from .track import DEFAULT_LENGTH, LANE_COUNT, TrackMap, generate_track, lane_center, lane_of

GRID_ROWS = 45
GRID_COLS = 3
ROW_SPAN = 2.0
GRID_AHEAD = 60.0
GRID_BEHIND = 30.0
CAR_ROWS = 4
FREE_CELL = 1.0
EGO_ID = -1


class Event(str, enum.Enum):
    NORMAL = "normal"
    LEGAL_CHANGE = "legal_change"
    ILLEGAL_CHANGE = "illegal_change"
    INVALID_CHANGE = "invalid_change"
    COLLISION = "collision"
    LAP_COMPLETE = "lap_complete"


@dataclass(frozen=True)
class RewardParams:
    lam: float = 0.04
    v_ref: float = 25.0  # MPH
    r_co: float = -10.0
    r_ch1: float = -5.0
    r_ch2: float = -3.0
    r_ch3: float = -0.3
    front_car_range: float = 60.0  # m
    penalize_cancelled: bool = False  # add r_ch3 when the shield cancels a change

    def validate(self):
        if not self.r_co < self.r_ch1 < self.r_ch2 < self.r_ch3 < 0:
            raise InvalidArgument("need r_co < r_ch1 < r_ch2 < r_ch3 < 0")
        if self.lam <= 0 or self.front_car_range <= 0:
            raise InvalidArgument("lam and front_car_range must be positive")
        return self


@dataclass(frozen=True)
class EnvConfig:
    npc_count: int = 12
    shield_enabled: bool = True
    track_seed: int = 0
    track_length: float = DEFAULT_LENGTH
    spawn_span: tuple = (40.0, 640.0)
    recycle: RecyclePolicy | None = field(default_factory=RecyclePolicy)
    reward: RewardParams = field(default_factory=RewardParams)
    speed: SpeedControlConfig = field(default_factory=SpeedControlConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    shield: ShieldConfig = field(default_factory=ShieldConfig)

    def validate(self):
        if not isinstance(self.npc_count, int) or not 0 <= self.npc_count <= MAX_NPCS:
            raise InvalidArgument(f"npc_count must be in [0, {MAX_NPCS}]")
        self.reward.validate()
        self.speed.validate()
        self.planner.validate()
        self.shield.validate()
        return self


@dataclass
class StepResult:
    next_grid: np.ndarray
    next_aux: np.ndarray
    reward: float
    done: bool
    event: Event
    avg_speed: float
    executed_action: Action
    shield_cancelled: bool
    world: WorldState
    lane_changed: bool = False
    ticks: int = 0


# -- state encoding -----------------------------------------------------------
def car_rows(rel: float) -> range:
    """Grid rows painted for a car centred ``rel`` m ahead of the ego (clipped)."""
    # 4-row window whose centre (60 - 2*k0 - 4) is nearest the car centre
    k0 = math.floor((GRID_AHEAD - CAR_ROWS * ROW_SPAN / 2 - rel) / ROW_SPAN + 0.5)
    return range(max(k0, 0), min(k0 + CAR_ROWS, GRID_ROWS))


def grid_entries(world: WorldState):
    """(|rel|, order, rel, lane, value) for every vehicle inside the grid window."""
    L = world.track.total_length
    ego = world.ego
    out = [(0.0, 0, 0.0, ego.lane, ego.speed / 100.0)]
    for order, (s, d, v) in enumerate(zip(world.npc_s, world.npc_d, world.npc_speed), start=1):
        rel = (s - ego.s + GRID_BEHIND) % L - GRID_BEHIND
        if rel < GRID_AHEAD:
            out.append((abs(rel), order, rel, lane_of(d), -v / 100.0))
    return out


def encode_state(world: WorldState) -> tuple[np.ndarray, np.ndarray]:
    grid = np.full((GRID_ROWS, GRID_COLS), FREE_CELL)
    # nearest car to the ego is painted last, so it wins shared cells
    for _, _, rel, lane, value in sorted(grid_entries(world), reverse=True):
        r = car_rows(rel)
        grid[r.start:r.stop, lane] = value
    lane = world.ego.lane
    aux = np.array([world.ego.speed / 50.0, float(lane > 0), float(lane < LANE_COUNT - 1)])
    return grid, aux


# -- decisions and reward -----------------------------------------------------
def classify_decision(world: WorldState, chosen_action: Action, params: RewardParams = RewardParams()) -> Event:
    action = Action(chosen_action)
    if action == Action.KEEP:
        return Event.NORMAL
    lane = world.ego.lane
    if (action == Action.LEFT and lane == 0) or (action == Action.RIGHT and lane == LANE_COUNT - 1):
        return Event.ILLEGAL_CHANGE
    gap, _ = ego_leader(world)
    if gap > params.front_car_range:
        return Event.INVALID_CHANGE
    return Event.LEGAL_CHANGE


def compute_reward(event: Event, avg_speed: float, params: RewardParams = RewardParams()) -> float:
    event = Event(event)
    if event == Event.COLLISION:
        return params.r_co
    if event == Event.ILLEGAL_CHANGE:
        return params.r_ch1
    if event == Event.INVALID_CHANGE:
        return params.r_ch2
    r_v = params.lam * (avg_speed - params.v_ref)
    if event == Event.LEGAL_CHANGE:
        return r_v + params.r_ch3
    return r_v


# -- episodes -----------------------------------------------------------------
@functools.lru_cache(maxsize=8)
def _track(seed: int, length: float) -> TrackMap:
    return generate_track(seed, length)


def reset_episode(seed: int, config: EnvConfig = EnvConfig()) -> tuple[WorldState, np.ndarray, np.ndarray]:
    track = _track(config.track_seed, config.track_length)
    npcs = spawn_npcs(track, seed, config.npc_count, span=config.spawn_span)
    ego = VehicleState(EGO_ID, 0.0, lane_center(1), 0.0)
    world = make_world(track, ego, npcs, rng=np.random.default_rng(seed), recycle=config.recycle)
    grid, aux = encode_state(world)
    return world, grid, aux


def env_step(world: WorldState, chosen_action: Action, config: EnvConfig = EnvConfig()) -> StepResult:
    """Run one decision period; the world is advanced tick by tick."""
    action = Action(chosen_action)
    decision = classify_decision(world, action, config.reward)
    executed, cancelled = Action.KEEP, False
    if decision == Event.LEGAL_CHANGE:
        executed = action
        if config.shield_enabled:
            verdict = shield(world, action, config.shield, config.planner, config.speed)
            executed, cancelled = verdict.approved_action, verdict.cancelled
    reward_event = decision
    if cancelled:
        reward_event = Event.LEGAL_CHANGE if config.reward.penalize_cancelled else Event.NORMAL

    m = maneuver_for(world, executed, config.planner)
    world = replace(world, maneuver=m)
    L = world.track.total_length
    speed_sum, ticks, terminal = 0.0, 0, None
    for _ in range(m.n_ticks):
        world = step_world(world, next_path_point(world, m, config.speed, config.planner))
        speed_sum += world.ego.speed
        ticks += 1
        if detect_collision(world):
            terminal = Event.COLLISION
            break
        if world.progress >= L:
            terminal = Event.LAP_COMPLETE
            break
    world = replace(world, maneuver=None)
    avg_speed = speed_sum / ticks
    reward = compute_reward(Event.COLLISION if terminal == Event.COLLISION else reward_event, avg_speed, config.reward)
    event = terminal or (Event.NORMAL if cancelled else decision)
    grid, aux = encode_state(world)
    return StepResult(
        next_grid=grid,
        next_aux=aux,
        reward=reward,
        done=terminal is not None,
        event=event,
        avg_speed=avg_speed,
        executed_action=executed,
        shield_cancelled=cancelled,
        world=world,
        lane_changed=executed != Action.KEEP and ticks == m.n_ticks,
        ticks=ticks,
    )


def transition_record(result: StepResult, action: Action) -> dict:
    w = result.world
    return {
        "tick": w.tick,
        "s": w.ego.s,
        "d": w.ego.d,
        "speed": w.ego.speed,
        "action": int(action),
        "executed_action": int(result.executed_action),
        "reward": result.reward,
        "event": result.event.value,
        "shield_cancelled": result.shield_cancelled,
    }


class HighwayEnv:
    """Stateful wrapper that refuses to step a finished episode."""

    def __init__(self, config: EnvConfig = EnvConfig()):
        self.config = config.validate()
        self.world: WorldState | None = None
        self.done = True

    def reset(self, seed: int):
        self.world, grid, aux = reset_episode(seed, self.config)
        self.done = False
        return grid, aux

    def step(self, action: Action) -> StepResult:
        if self.done or self.world is None:
            raise EpisodeDone("episode is finished; call reset()")
        result = env_step(self.world, action, self.config)
        self.world = result.world
        self.done = result.done
        return result
