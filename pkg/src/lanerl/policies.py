"""Comparison policies and the evaluation protocol."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import EnvConfig, HighwayEnv, encode_state
from .errors import ConfigError
from .planning import Action, ego_leader
from .sim import WorldState
from .track import LANE_COUNT

POLICY_KINDS = ("random", "rule_based", "dqn", "rule_based_dqn")
DEFAULT_SHIELD = {"random": True, "rule_based": True, "dqn": False, "rule_based_dqn": True}
TABLE_NAMES = {
    "random": "random-action policy",
    "rule_based": "rule-based policy",
    "dqn": "DQN-based policy",
    "rule_based_dqn": "rule-based DQN policy",
}


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    shield_enabled: bool | None = None
    checkpoint: str | None = None
    rule_trigger_gap: float = 20.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.shield_enabled is None:
            object.__setattr__(self, "shield_enabled", DEFAULT_SHIELD[self.kind])

    @property
    def needs_checkpoint(self) -> bool:
        return self.kind in ("dqn", "rule_based_dqn")


def random_policy(world: WorldState, rng: np.random.Generator) -> Action:
    return Action(int(rng.integers(3)))


def rule_based_policy(world: WorldState, spec: PolicySpec = PolicySpec("rule_based")) -> Action:
    lane = world.ego.lane
    gap, _ = ego_leader(world, [lane])
    if gap >= spec.rule_trigger_gap:
        return Action.KEEP
    # left first: "tendency to switch to the left"
    for action, other in ((Action.LEFT, lane - 1), (Action.RIGHT, lane + 1)):
        if 0 <= other < LANE_COUNT and ego_leader(world, [other])[0] > gap:
            return action
    return Action.KEEP


@dataclass
class EpisodeMetrics:
    episode: int
    avg_speed: float
    lane_changes: int
    collided: bool
    steps: int
    cumulative_reward: float
    completed_changes: int = 0


def run_episode(env: HighwayEnv, seed: int, choose, on_step=None) -> EpisodeMetrics:
    """Drive one episode; ``choose(world, grid, aux)`` returns the decision.

    ``lane_changes`` counts lane-change decisions, whatever became of them;
    ``completed_changes`` counts manoeuvres that actually finished.
    """
    grid, aux = env.reset(seed)
    speed_ticks = ticks = changes = completed = steps = 0
    total = 0.0
    collided = False
    while not env.done:
        action = choose(env.world, grid, aux)
        res = env.step(action)
        if on_step is not None:
            on_step(action, res, grid, aux)
        grid, aux = res.next_grid, res.next_aux
        speed_ticks += res.avg_speed * res.ticks
        ticks += res.ticks
        changes += action != Action.KEEP
        completed += res.lane_changed
        steps += 1
        total += res.reward
        collided = collided or res.event.value == "collision"
    return EpisodeMetrics(0, speed_ticks / ticks, changes, collided, steps, total, completed)


def make_chooser(spec: PolicySpec, rng: np.random.Generator):
    if spec.kind == "random":
        return lambda world, grid, aux: random_policy(world, rng)
    if spec.kind == "rule_based":
        return lambda world, grid, aux: rule_based_policy(world, spec)
    from .dqn import load_checkpoint

    if spec.checkpoint is None or not Path(spec.checkpoint).exists():
        raise ConfigError(f"policy {spec.kind!r} needs an existing checkpoint, got {spec.checkpoint!r}")
    net, _ = load_checkpoint(spec.checkpoint)

    def greedy(world, grid, aux):
        q = net.forward(grid[None], aux[None])[0]
        return Action(int(np.argmax(q)))

    return greedy


def episode_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([seed, 0xE7A1])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def evaluate_policy(spec: PolicySpec, n_episodes: int = 10, seed: int = 0, env_config: EnvConfig = EnvConfig()) -> dict:
    """Average speed, lane changes and safety rate over ``n_episodes`` seeded episodes."""
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    env = HighwayEnv(replace(env_config, shield_enabled=spec.shield_enabled))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7011C7]))
    choose = make_chooser(spec, rng)
    episodes = []
    for i, ep_seed in enumerate(episode_seeds(seed, n_episodes)):
        m = run_episode(env, ep_seed, choose)
        m.episode = i
        episodes.append(m)
    return {
        "policy": spec.kind,
        "shield_enabled": spec.shield_enabled,
        "n_episodes": n_episodes,
        "avg_speed": float(np.mean([m.avg_speed for m in episodes])),
        "avg_changes": float(np.mean([m.lane_changes for m in episodes])),
        "avg_completed_changes": float(np.mean([m.completed_changes for m in episodes])),
        "safety_rate": sum(not m.collided for m in episodes) / n_episodes,
        "per_episode": [asdict(m) for m in episodes],
    }


def format_table(reports: list[dict]) -> str:
    header = f"{'':<24}{'avg v (MPH)':>12}{'avg c_ch':>10}{'safety rate':>13}"
    lines = [header, "-" * len(header)]
    for r in reports:
        name = TABLE_NAMES.get(r["policy"], r["policy"])
        lines.append(f"{name:<24}{r['avg_speed']:>12.2f}{r['avg_changes']:>10.2f}{r['safety_rate']:>13.2f}")
    return "\n".join(lines) + "\n"


def write_report(reports: list[dict], out_dir) -> None:
    out = Path(out_dir)
    (out / "report.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_table(reports))
