"""Online DQN training on the highway MDP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dqn import DQNAgent, EpsilonSchedule, Experience, TrainConfig
from .env import EnvConfig, HighwayEnv
from .errors import ConfigError
from .policies import EpisodeMetrics, run_episode


def training_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([seed, 0x7EA1])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


@dataclass
class TrainingRun:
    agent: DQNAgent
    metrics: list[EpisodeMetrics] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def train_dqn(
    episodes: int,
    seed: int = 0,
    env_config: EnvConfig = EnvConfig(),
    train_config: TrainConfig = TrainConfig(),
    schedule: EpsilonSchedule = EpsilonSchedule(),
    on_episode=None,
) -> TrainingRun:
    """Act, store, update after every decision; ``on_episode(metrics)`` after each episode.

    The agent's chosen action is stored even when the shield executed a keep.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    env = HighwayEnv(env_config)
    run = TrainingRun(DQNAgent(train_config, schedule, seed=seed))
    agent = run.agent

    def choose(world, grid, aux):
        return agent.act(grid, aux)

    def store(action, res, grid, aux):
        loss = agent.observe(Experience(grid, aux, int(action), res.reward, res.next_grid, res.next_aux, res.done))
        if loss is not None:
            run.losses.append(loss)

    for i, ep_seed in enumerate(training_seeds(seed, episodes)):
        m = run_episode(env, ep_seed, choose, on_step=store)
        m.episode = i
        run.metrics.append(m)
        if on_episode is not None:
            on_episode(m)
    return run
