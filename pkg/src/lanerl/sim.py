"""Kinematic three-lane loop highway with an ego car and scripted NPCs.

NPC state is kept as parallel numpy arrays so one tick costs a handful of
vector ops; ``WorldState.npcs`` exposes them as ``VehicleState`` records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, PlannerStarvation
from .track import LANE_COUNT, LANE_WIDTH, ROAD_WIDTH, TrackMap, lane_center, lane_of, wrap_s

MPH = 0.44704  # m/s per MPH
DT = 0.02
CAR_LENGTH = 5.5
CAR_WIDTH = 2.0
MAX_NPCS = 12
SPEED_LIMIT = 50.0
NPC_MAX_ACCEL = 5.0
# vehicles closer than this laterally are treated as sharing a lane for gap keeping
SAME_LANE_DD = 3.0
NPC_LATERAL_RATE = LANE_WIDTH / 3.0
GAP_GAIN = 0.5  # MPH of speed deficit per metre inside the follow gap


@dataclass(frozen=True, slots=True)
class VehicleState:
    id: int
    s: float
    d: float
    speed: float  # MPH
    length: float = CAR_LENGTH
    width: float = CAR_WIDTH

    @property
    def lane(self) -> int:
        return lane_of(self.d)


@dataclass(frozen=True)
class NpcBehavior:
    cruise_speed: float
    follow_gap: float = 15.0
    lane_change_enabled: bool = False

    def __post_init__(self):
        if not 30.0 <= self.cruise_speed <= 48.0:
            raise InvalidArgument(f"NPC cruise speed {self.cruise_speed} outside [30, 48] MPH")
        if self.follow_gap <= 0:
            raise InvalidArgument("follow_gap must be positive")


@dataclass(frozen=True)
class RecyclePolicy:
    """NPCs leaving ``[-behind, ahead]`` around the ego reappear ``respawn`` m ahead of it.

    Keeps the interference traffic near the ego for the whole lap; respawn
    draws come from the world's seeded generator.
    """

    behind: float = 100.0
    ahead: float = 600.0
    respawn: tuple = (150.0, 400.0)
    min_gap: float = 30.0


@dataclass(frozen=True)
class Maneuver:
    """Active ego lateral motion: ``d`` goes from ``d_start`` to ``d_end`` over ``n_ticks``."""

    kind: str  # "keep" | "change_left" | "change_right"
    start_tick: int
    d_start: float
    d_end: float
    target_lane: int
    n_ticks: int


@dataclass(eq=False)
class WorldState:
    track: TrackMap
    tick: int
    ego: VehicleState
    npc_ids: np.ndarray
    npc_s: np.ndarray
    npc_d: np.ndarray
    npc_speed: np.ndarray
    behaviors: tuple
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    ego_xy: tuple = (0.0, 0.0)
    ego_accel: float = 0.0  # m/s^2 along the path
    ego_lon_speed: float = 0.0  # along-road speed, MPH (ego.speed also includes lateral motion)
    ref_speed: float = 0.0  # longitudinal controller setpoint, MPH
    progress: float = 0.0  # unwrapped ego distance in s since reset
    maneuver: Maneuver | None = None
    npc_target_d: np.ndarray | None = None
    recycle: "RecyclePolicy | None" = None

    @property
    def time(self) -> float:
        return self.tick * DT

    @property
    def npcs(self) -> list[VehicleState]:
        return [
            VehicleState(int(i), float(s), float(d), float(v))
            for i, s, d, v in zip(self.npc_ids, self.npc_s, self.npc_d, self.npc_speed)
        ]

    @property
    def npc_count(self) -> int:
        return len(self.npc_s)


def make_world(
    track: TrackMap,
    ego: VehicleState,
    npcs=(),
    behaviors=None,
    *,
    tick: int = 0,
    ref_speed: float | None = None,
    ego_accel: float = 0.0,
    rng: np.random.Generator | None = None,
    recycle: RecyclePolicy | None = None,
) -> WorldState:
    """Assemble a world from vehicle records (NPC cruise speed defaults to its current speed)."""
    npcs = list(npcs)
    if len(npcs) > MAX_NPCS:
        raise InvalidArgument(f"at most {MAX_NPCS} NPCs, got {len(npcs)}")
    if behaviors is None:
        behaviors = tuple(NpcBehavior(min(max(v.speed, 30.0), 48.0)) for v in npcs)
    L = track.total_length
    npc_d = np.array([v.d for v in npcs], dtype=float)
    return WorldState(
        track=track,
        tick=tick,
        ego=VehicleState(ego.id, wrap_s(ego.s, L), ego.d, ego.speed),
        npc_ids=np.array([v.id for v in npcs], dtype=int),
        npc_s=np.array([wrap_s(v.s, L) for v in npcs], dtype=float),
        npc_d=npc_d,
        npc_speed=np.array([v.speed for v in npcs], dtype=float),
        behaviors=tuple(behaviors),
        rng=rng if rng is not None else np.random.default_rng(0),
        ego_xy=track.frenet_to_cartesian(ego.s, ego.d),
        ego_accel=ego_accel,
        ego_lon_speed=ego.speed,
        ref_speed=ego.speed if ref_speed is None else ref_speed,
        npc_target_d=npc_d.copy(),
        recycle=recycle,
    )


def spawn_npcs(
    track: TrackMap,
    seed: int,
    count: int,
    *,
    span: tuple[float, float] = (40.0, 1240.0),
    min_gap: float = 30.0,
) -> list[VehicleState]:
    """Place ``count`` NPCs at lane centres inside ``span`` (s range ahead of the start line)."""
    if not isinstance(count, (int, np.integer)) or not 0 <= count <= MAX_NPCS:
        raise InvalidArgument(f"NPC count must be an integer in [0, {MAX_NPCS}], got {count!r}")
    rng = np.random.default_rng(seed)
    L = track.total_length
    placed: list[VehicleState] = []
    for i in range(count):
        for _ in range(10_000):
            lane = int(rng.integers(LANE_COUNT))
            s = wrap_s(float(rng.uniform(*span)), L)
            ok = all(
                v.lane != lane or abs((v.s - s + L / 2) % L - L / 2) >= min_gap for v in placed
            )
            if ok:
                break
        else:
            raise InvalidArgument(f"could not place {count} NPCs with {min_gap} m gaps in {span}")
        placed.append(VehicleState(i, s, lane_center(lane), float(rng.uniform(30.0, 48.0))))
    return placed


def _npc_lane_changes(world, target_d, rel, d_all, blocked):
    L = world.track.total_length
    for i in np.flatnonzero(blocked):
        if not world.behaviors[i].lane_change_enabled or target_d[i] != world.npc_d[i]:
            continue
        lane = lane_of(world.npc_d[i])
        for cand in (lane - 1, lane + 1):
            if not 0 <= cand < LANE_COUNT:
                continue
            cd = lane_center(cand)
            near = np.abs(d_all - cd) < SAME_LANE_DD
            r = (rel[i] + L / 2) % L - L / 2
            if not np.any(near & (r > -15.0) & (r < 30.0)):
                target_d[i] = cd
                break


_BEHAVIOR_CACHE: dict = {}


def _behavior_arrays(behaviors):
    key = id(behaviors)
    hit = _BEHAVIOR_CACHE.get(key)
    if hit is None or hit[0] is not behaviors:
        arrays = (
            np.array([b.cruise_speed for b in behaviors]),
            np.array([b.follow_gap for b in behaviors]),
            any(b.lane_change_enabled for b in behaviors),
        )
        if len(_BEHAVIOR_CACHE) > 64:
            _BEHAVIOR_CACHE.clear()
        hit = _BEHAVIOR_CACHE[key] = (behaviors, arrays)
    return hit[1]


def step_world(world: WorldState, ego_path_segment, dt: float = DT) -> WorldState:
    """Advance one tick: the ego jumps to the first point of ``ego_path_segment``."""
    if ego_path_segment is None or len(ego_path_segment) == 0:
        raise PlannerStarvation("step_world needs at least one ego path point")
    if abs(dt - DT) > 1e-12:
        raise InvalidArgument(f"the simulator runs at a fixed tick of {DT} s")
    track = world.track
    L = track.total_length
    p = ego_path_segment
    x, y, s, d = float(p.x[0]), float(p.y[0]), float(p.s[0]), float(p.d[0])
    px, py = world.ego_xy
    ego_speed = math.hypot(x - px, y - py) / dt / MPH
    s = wrap_s(s, L)
    ds = (s - world.ego.s + L / 2) % L - L / 2
    ego = VehicleState(world.ego.id, s, d, ego_speed)

    n = world.npc_count
    npc_s, npc_d, npc_v = world.npc_s, world.npc_d, world.npc_speed
    target_d = world.npc_target_d if world.npc_target_d is not None else npc_d.copy()
    if n:
        s_all = np.concatenate((npc_s, (world.ego.s,)))
        d_all = np.concatenate((npc_d, (world.ego.d,)))
        v_all = np.concatenate((npc_v, (world.ego.speed,)))
        rel = (s_all[None, :] - npc_s[:, None]) % L
        same = np.abs(d_all[None, :] - npc_d[:, None]) < SAME_LANE_DD
        diag = np.arange(n)
        same[diag, diag] = False
        gaps = np.where(same, rel, np.inf)
        lead = np.argmin(gaps, axis=1)
        gap = gaps[diag, lead]
        cruise, follow, npc_changes = _behavior_arrays(world.behaviors)
        close = gap < follow
        # inside the follow gap: leader speed, less a term that reopens the gap
        catch_up = v_all[lead] - GAP_GAIN * np.maximum(follow - gap, 0.0)
        target = np.where(close, np.minimum(catch_up, cruise), cruise)
        dv = NPC_MAX_ACCEL * dt / MPH
        new_v = np.maximum(npc_v + np.minimum(np.maximum(target - npc_v, -dv), dv), 0.0)
        new_s = np.mod(npc_s + new_v * MPH * dt, L)
        new_s[new_s >= L] = 0.0
        target_d = target_d.copy()
        if npc_changes:
            _npc_lane_changes(world, target_d, rel, d_all, close & (v_all[lead] < cruise - 2.0))
        step = NPC_LATERAL_RATE * dt
        new_d = npc_d + np.minimum(np.maximum(target_d - npc_d, -step), step)
        behaviors = world.behaviors
        if world.recycle is not None:
            new_s, new_d, new_v, target_d, behaviors = _recycle(
                world, ego.s, new_s, new_d, new_v, target_d
            )
    else:
        new_s, new_d, new_v = npc_s, npc_d, npc_v
        behaviors = world.behaviors

    return WorldState(
        track=track,
        tick=world.tick + 1,
        ego=ego,
        npc_ids=world.npc_ids,
        npc_s=new_s,
        npc_d=new_d,
        npc_speed=new_v,
        behaviors=behaviors,
        rng=world.rng,
        ego_xy=(x, y),
        ego_accel=float(p.accel[0]) if getattr(p, "accel", None) is not None else world.ego_accel,
        ego_lon_speed=float(p.speed[0]) if getattr(p, "speed", None) is not None else ego_speed,
        ref_speed=float(p.ref_speed[0]) if getattr(p, "ref_speed", None) is not None else world.ref_speed,
        progress=world.progress + ds,
        maneuver=world.maneuver,
        npc_target_d=target_d,
        recycle=world.recycle,
    )


def _recycle(world, ego_s, s, d, v, target_d):
    pol = world.recycle
    L = world.track.total_length
    half = L / 2
    out = [i for i, si in enumerate(s.tolist()) if not -pol.behind <= (si - ego_s + half) % L - half <= pol.ahead]
    if not out:
        return s, d, v, target_d, world.behaviors
    s, d, v, target_d = s.copy(), d.copy(), v.copy(), target_d.copy()
    behaviors = list(world.behaviors)
    rng = world.rng
    for i in out:
        lane = int(rng.integers(LANE_COUNT))
        cand = wrap_s(ego_s + float(rng.uniform(*pol.respawn)), L)
        speed = float(rng.uniform(30.0, 48.0))
        others = np.flatnonzero((np.abs(d - lane_center(lane)) < SAME_LANE_DD) & (np.arange(len(s)) != i))
        if np.any(np.abs(np.mod(s[others] - cand + L / 2, L) - L / 2) < pol.min_gap):
            continue  # retried on a later tick
        s[i], d[i], v[i], target_d[i] = cand, lane_center(lane), speed, lane_center(lane)
        behaviors[i] = replace(behaviors[i], cruise_speed=speed)
    return s, d, v, target_d, tuple(behaviors)


def vehicles_collide(a: VehicleState, b: VehicleState, total_length: float) -> bool:
    ds = (b.s - a.s + total_length / 2) % total_length - total_length / 2
    return abs(ds) < (a.length + b.length) / 2 and abs(b.d - a.d) < (a.width + b.width) / 2


def detect_collision(world: WorldState) -> bool:
    if world.npc_count == 0:
        return False
    L = world.track.total_length
    ego = world.ego
    half_len, half_wid, half_L = (ego.length + CAR_LENGTH) / 2, (ego.width + CAR_WIDTH) / 2, L / 2
    for s, d in zip(world.npc_s.tolist(), world.npc_d.tolist()):
        if abs(d - ego.d) < half_wid and abs((s - ego.s + half_L) % L - half_L) < half_len:
            return True
    return False


def in_road(d: float) -> bool:
    return 0.0 <= d <= ROAD_WIDTH
