"""Run configuration: JSON file with full defaulting, overridable from the command line.

Schema (every key optional)::

    {"seed": 0, "episodes": 100, "npc_count": 12, "eval_episodes": 10, "log_dir": "runs",
     "shield": {...ShieldConfig}, "speed": {...SpeedControlConfig},
     "reward": {...RewardParams}, "train": {...TrainConfig},
     "epsilon": {...EpsilonSchedule}, "planner": {...PlannerConfig}}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dqn import EpsilonSchedule, TrainConfig
from .env import EnvConfig, RewardParams
from .errors import ConfigError, InvalidArgument
from .planning import PlannerConfig, ShieldConfig, SpeedControlConfig
from .sim import MAX_NPCS

SECTIONS = {
    "shield": ShieldConfig,
    "speed": SpeedControlConfig,
    "reward": RewardParams,
    "train": TrainConfig,
    "epsilon": EpsilonSchedule,
    "planner": PlannerConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    episodes: int = 100
    npc_count: int = 12
    eval_episodes: int = 10
    log_dir: str = "runs"
    shield: ShieldConfig = field(default_factory=ShieldConfig)
    speed: SpeedControlConfig = field(default_factory=SpeedControlConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def validate(self) -> "RunConfig":
        for name in ("seed", "episodes", "npc_count", "eval_episodes"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name}: expected an integer, got {value!r}")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if self.episodes < 1:
            raise ConfigError("episodes: must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes: must be >= 1")
        if not 0 <= self.npc_count <= MAX_NPCS:
            raise ConfigError(f"npc_count: must lie in [0, {MAX_NPCS}]")
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except InvalidArgument as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        return self

    def env_config(self, shield_enabled: bool = True) -> EnvConfig:
        return EnvConfig(
            npc_count=self.npc_count,
            shield_enabled=shield_enabled,
            reward=self.reward,
            speed=self.speed,
            planner=self.planner,
            shield=self.shield,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        default = getattr(cls(), key)
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        else:
            ok = True
        if not ok:
            raise ConfigError(f"{name}.{key}: expected {type(default).__name__}, got {value!r}")
        values[key] = value
    return cls(**values)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)} - set(SECTIONS)
    unknown = sorted(set(raw) - top - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(unknown)}")
    values = {k: raw[k] for k in top if k in raw}
    if "log_dir" in values and not isinstance(values["log_dir"], str):
        raise ConfigError("log_dir: expected a string")
    for name, cls in SECTIONS.items():
        if name in raw:
            values[name] = _section(cls, raw[name], name)
    return RunConfig(**values)


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the JSON file, then non-None ``overrides``; validated."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(raw)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
