"""Longitudinal speed control, lane keep/change paths and the safety shield.

Lateral motion during a maneuver follows a C2 piecewise-cubic offset profile
(four equal cubic segments with jerk +c, -c, -c, +c), the cubic spline with
the lowest peak jerk for a rest-to-rest lane shift.  Longitudinal motion
tracks the controller setpoint with bounded acceleration and jerk.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, PlanningError
from .sim import DT, MPH, SPEED_LIMIT, Maneuver, WorldState, in_road
from .track import LANE_COUNT, LANE_WIDTH, lane_center, lane_of, wrap_s


class Action(enum.IntEnum):
    KEEP = 0
    LEFT = 1
    RIGHT = 2


MANEUVER_NAMES = {Action.KEEP: "keep", Action.LEFT: "change_left", Action.RIGHT: "change_right"}


@dataclass(frozen=True)
class SpeedControlConfig:
    target_speed: float = 49.5  # MPH
    follow_gap: float = 30.0  # m
    max_delta_per_tick: float = 0.224  # MPH

    def validate(self):
        if not 0 < self.target_speed < SPEED_LIMIT:
            raise InvalidArgument(f"target_speed must be in (0, {SPEED_LIMIT}) MPH")
        if self.follow_gap <= 0:
            raise InvalidArgument("follow_gap must be positive")
        if not 0 < self.max_delta_per_tick * MPH / DT <= 10.0 + 0.01:
            raise InvalidArgument("max_delta_per_tick implies an acceleration above 10 m/s^2")
        return self


@dataclass(frozen=True)
class PlannerConfig:
    lane_change_time: float = 3.0  # s
    keep_ticks: int = 50  # one keep-lane decision period
    accel_limit: float = 5.0  # m/s^2, ego tracking
    jerk_limit: float = 5.0  # m/s^3, ego tracking

    @property
    def change_ticks(self) -> int:
        return int(round(self.lane_change_time / DT))

    def validate(self):
        if self.lane_change_time <= 0 or self.keep_ticks < 1:
            raise InvalidArgument("lane_change_time and keep_ticks must be positive")
        if not 0 < self.accel_limit <= 10 or not 0 < self.jerk_limit <= 10:
            raise InvalidArgument("accel_limit and jerk_limit must lie in (0, 10]")
        return self


@dataclass(frozen=True)
class ShieldConfig:
    horizon: float = 3.0  # s
    lat_conflict: float = 2.5  # m
    lon_threshold: float = 6.0  # m

    def validate(self):
        if min(self.horizon, self.lat_conflict, self.lon_threshold) <= 0:
            raise InvalidArgument("shield parameters must be positive")
        return self


@dataclass
class PlannedPath:
    """Per-tick ego samples; ``x``/``y`` are the points handed to the simulator."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    d: np.ndarray
    speed: np.ndarray  # along-road speed, MPH
    accel: np.ndarray  # along-road acceleration, m/s^2
    ref_speed: np.ndarray  # controller setpoint, MPH
    target_lane: int
    maneuver: str

    def __len__(self):
        return len(self.x)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


@dataclass(frozen=True)
class PredictedTrajectory:
    vehicle_id: int
    s: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class ShieldDecision:
    approved_action: Action
    cancelled: bool


# -- lateral profile ----------------------------------------------------------
def lateral_fraction(tau: float) -> float:
    """Bang-bang-jerk smooth step on [0, 1]; S(0)=0, S(1)=1, S' = S'' = 0 at both ends."""
    if tau <= 0.0:
        return 0.0
    if tau >= 1.0:
        return 1.0
    if tau > 0.5:
        return 1.0 - lateral_fraction(1.0 - tau)
    if tau <= 0.25:
        return 16.0 / 3.0 * tau**3
    u = tau - 0.25
    return 1.0 / 12.0 + u + 4.0 * u * u - 16.0 / 3.0 * u**3


def maneuver_for(world: WorldState, action: Action, planner: PlannerConfig = PlannerConfig()) -> Maneuver:
    d = world.ego.d
    if not in_road(d):
        raise PlanningError(f"ego d={d:.2f} m is outside the road")
    lane = lane_of(d)
    action = Action(action)
    target = lane + {Action.KEEP: 0, Action.LEFT: -1, Action.RIGHT: 1}[action]
    if not 0 <= target < LANE_COUNT:
        raise PlanningError(f"{MANEUVER_NAMES[action]} from lane {lane} leaves the road")
    n = planner.keep_ticks if action == Action.KEEP else planner.change_ticks
    return Maneuver(MANEUVER_NAMES[action], world.tick, d, lane_center(target), target, n)


def lateral_offset(m: Maneuver, tick: int) -> float:
    tau = (tick - m.start_tick) / m.n_ticks
    return m.d_start + (m.d_end - m.d_start) * lateral_fraction(tau)


# -- longitudinal control -----------------------------------------------------
def _leader(ego_s, lanes, npc_s, npc_d, npc_v, L):
    """Nearest vehicle ahead in any of ``lanes``: (centre gap m, speed MPH) or (inf, nan)."""
    # a dozen cars: a plain loop beats a chain of tiny numpy calls
    lanes = [int(l) for l in lanes]
    half = L / 2
    best, speed = math.inf, math.nan
    for s, d, v in zip(npc_s.tolist(), npc_d.tolist(), npc_v.tolist()):
        if min(max(int(d // LANE_WIDTH), 0), LANE_COUNT - 1) not in lanes:
            continue
        rel = (s - ego_s) % L
        if rel < half and rel < best:
            best, speed = rel, v
    return best, speed


def ego_leader(world: WorldState, lanes=None) -> tuple[float, float]:
    if lanes is None:
        lanes = [world.ego.lane]
    return _leader(world.ego.s, lanes, world.npc_s, world.npc_d, world.npc_speed, world.track.total_length)


def _command(ref, gap, lead_speed, cfg: SpeedControlConfig) -> float:
    delta = cfg.max_delta_per_tick
    goal = min(lead_speed, cfg.target_speed) if gap < cfg.follow_gap else cfg.target_speed
    ref = ref + min(max(goal - ref, -delta), delta)
    return min(max(ref, 0.0), cfg.target_speed)


def longitudinal_command(world: WorldState, config: SpeedControlConfig = SpeedControlConfig(), lanes=None) -> float:
    """Next-tick speed setpoint (MPH), moving at most ``max_delta_per_tick``."""
    gap, lead_speed = ego_leader(world, lanes)
    return _command(world.ref_speed, gap, lead_speed, config)


def _track_speed(v, a, ref_mph, planner: PlannerConfig):
    """One tick of acceleration- and jerk-limited tracking of ``ref_mph``; returns (v, a) in SI."""
    e = ref_mph * MPH - v
    # approach speed that lets the acceleration unwind at 80 % of the jerk budget
    a_des = math.copysign(min(planner.accel_limit, math.sqrt(1.6 * planner.jerk_limit * abs(e))), e)
    da = planner.jerk_limit * DT
    a_new = a + min(max(a_des - a, -da), da)
    v_new = v + a_new * DT
    if v_new < 0.0:
        v_new, a_new = 0.0, 0.0
    return v_new, a_new


def _advance(track, s, d, d_next, v):
    ds = v * DT / track.stretch(s, 0.5 * (d + d_next))
    s_next = s + ds
    x, y = track.frenet_to_cartesian(s_next, d_next)
    return wrap_s(s_next, track.total_length), x, y


def _lanes_for(m: Maneuver | None, d: float) -> list[int]:
    lanes = [lane_of(d)]
    if m is not None and m.target_lane not in lanes:
        lanes.append(m.target_lane)
    return lanes


def next_path_point(
    world: WorldState,
    maneuver: Maneuver | None,
    speed_cfg: SpeedControlConfig = SpeedControlConfig(),
    planner: PlannerConfig = PlannerConfig(),
) -> PlannedPath:
    """One-point path for the next tick against the live world."""
    ego = world.ego
    lanes = _lanes_for(maneuver, ego.d)
    ref = longitudinal_command(world, speed_cfg, lanes)
    v, a = _track_speed(world.ego_lon_speed * MPH, world.ego_accel, ref, planner)
    d_next = lateral_offset(maneuver, world.tick + 1) if maneuver is not None else ego.d
    s, x, y = _advance(world.track, ego.s, ego.d, d_next, v)
    return PlannedPath(
        np.array([x]), np.array([y]), np.array([s]), np.array([d_next]),
        np.array([v / MPH]), np.array([a]), np.array([ref]),
        maneuver.target_lane if maneuver else ego.lane,
        maneuver.kind if maneuver else "keep",
    )


def plan_path(
    world: WorldState,
    action: Action,
    speed_cfg: SpeedControlConfig = SpeedControlConfig(),
    planner: PlannerConfig = PlannerConfig(),
    n_ticks: int | None = None,
    speed_profile: str = "controller",
) -> PlannedPath:
    """Roll the ego forward for ``action`` against constant-velocity NPC predictions.

    ``speed_profile`` selects the longitudinal model: ``"controller"`` reacts to
    predicted leaders, ``"free"`` runs the controller on an empty road and
    ``"constant"`` holds the current along-road speed.  The last two do not
    depend on surrounding traffic.
    """
    if speed_profile not in ("controller", "free", "constant"):
        raise InvalidArgument(f"unknown speed profile {speed_profile!r}")
    m = maneuver_for(world, action, planner)
    n = m.n_ticks if n_ticks is None else n_ticks
    track, L = world.track, world.track.total_length
    lanes = _lanes_for(m, world.ego.d)
    s, d = world.ego.s, world.ego.d
    v, a, ref = world.ego_lon_speed * MPH, world.ego_accel, world.ref_speed
    out = np.empty((n, 7))
    for k in range(n):
        if speed_profile == "constant":
            a = 0.0
        else:
            gap, lead = math.inf, math.nan
            if speed_profile == "controller":
                pred_s = world.npc_s + world.npc_speed * MPH * ((k + 1) * DT)
                gap, lead = _leader(s, lanes, pred_s, world.npc_d, world.npc_speed, L)
            ref = _command(ref, gap, lead, speed_cfg)
            v, a = _track_speed(v, a, ref, planner)
        d_next = lateral_offset(m, world.tick + k + 1)
        s, x, y = _advance(track, s, d, d_next, v)
        d = d_next
        out[k] = (x, y, s, d, v / MPH, a, ref)
    return PlannedPath(*out.T.copy(), target_lane=m.target_lane, maneuver=m.kind)


def check_kinematic_limits(path, dt: float = DT) -> dict:
    """Finite-difference peak planar acceleration and jerk of a sampled path."""
    pts = path.points if isinstance(path, PlannedPath) else np.asarray(path, dtype=float)
    if pts.ndim != 2 or len(pts) < 4:
        raise InvalidArgument("need at least 4 path points to estimate jerk")
    vel = np.diff(pts, axis=0) / dt
    acc = np.diff(vel, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    max_accel = float(np.max(np.hypot(acc[:, 0], acc[:, 1])))
    max_jerk = float(np.max(np.hypot(jerk[:, 0], jerk[:, 1])))
    return {"max_accel": max_accel, "max_jerk": max_jerk, "ok": max_accel <= 10.0 and max_jerk <= 10.0}


# -- prediction and shield ----------------------------------------------------
def predict_npc(npc, horizon: float, dt: float = DT, total_length: float = math.inf) -> PredictedTrajectory:
    """Constant speed, constant lateral offset."""
    if horizon <= 0:
        raise InvalidArgument("horizon must be positive")
    n = int(math.floor(horizon / dt + 1e-9)) + 1
    s = npc.s + npc.speed * MPH * dt * np.arange(n)
    if math.isfinite(total_length):
        s = np.mod(s, total_length)
    return PredictedTrajectory(npc.id, s, np.full(n, float(npc.d)))


SHIELD_PROFILES = ("constant", "free")


def shield_ego_paths(
    world: WorldState,
    action: Action,
    cfg: ShieldConfig = ShieldConfig(),
    speed_cfg: SpeedControlConfig = SpeedControlConfig(),
    planner: PlannerConfig = PlannerConfig(),
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Ego (s, d) samples at t = 0, dt, ..., horizon under each traffic-independent profile.

    Holding speed and accelerating on a free road bracket what the ego does
    while the maneuver runs; neither depends on the NPCs, so adding an NPC can
    only add conflicts.
    """
    n = int(math.floor(cfg.horizon / DT + 1e-9))
    out = []
    for profile in SHIELD_PROFILES:
        plan = plan_path(world, action, speed_cfg, planner, n_ticks=n, speed_profile=profile)
        out.append((np.append(world.ego.s, plan.s), np.append(world.ego.d, plan.d)))
    return out


def shield(
    world: WorldState,
    proposed_action: Action,
    cfg: ShieldConfig = ShieldConfig(),
    planner: PlannerConfig = PlannerConfig(),
    speed_cfg: SpeedControlConfig = SpeedControlConfig(),
) -> ShieldDecision:
    proposed_action = Action(proposed_action)
    if proposed_action == Action.KEEP or world.npc_count == 0:
        return ShieldDecision(proposed_action, False)
    L = world.track.total_length
    for ego_s, ego_d in shield_ego_paths(world, proposed_action, cfg, speed_cfg, planner):
        t = np.arange(len(ego_s)) * DT
        npc_s = np.mod(world.npc_s[:, None] + world.npc_speed[:, None] * MPH * t[None, :], L)
        ds = np.abs(np.mod(npc_s - ego_s[None, :] + L / 2, L) - L / 2)
        dd = np.abs(world.npc_d[:, None] - ego_d[None, :])
        if np.any((dd < cfg.lat_conflict) & (ds < cfg.lon_threshold)):
            return ShieldDecision(Action.KEEP, True)
    return ShieldDecision(proposed_action, False)
