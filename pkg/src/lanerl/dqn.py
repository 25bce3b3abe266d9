"""DQN training pieces: split replay, epsilon schedule, TD targets, updates, checkpoints."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, InvalidArgument
from .planning import Action
from .qnet import AUX_SIZE, GRID_SHAPE, N_ACTIONS, PARAM_ORDER, Adam, QNetwork

MAGIC = b"LSRL1"


@dataclass(frozen=True)
class EpsilonSchedule:
    eps0: float = 1.0
    decay: float = 0.99985
    eps_min: float = 0.03
    step: int = 0

    def validate(self):
        if not 0 <= self.eps_min <= self.eps0 <= 1 or not 0 < self.decay <= 1:
            raise InvalidArgument("need 0 <= eps_min <= eps0 <= 1 and 0 < decay <= 1")
        return self

    def value(self, step: int | None = None) -> float:
        return epsilon(self, self.step if step is None else step)

    def advance(self) -> "EpsilonSchedule":
        return replace(self, step=self.step + 1)


def epsilon(schedule: EpsilonSchedule, step: int) -> float:
    if step < 0:
        raise InvalidArgument("step must be >= 0")
    return max(schedule.eps0 * schedule.decay**step, schedule.eps_min)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    batch: int = 32
    target_sync: int = 500  # gradient updates between target syncs
    learning_rate: float = 1e-4
    grad_clip: float = 1.0
    warmup: int = 500
    capacity: int = 20000

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise InvalidArgument("gamma must lie in (0, 1]")
        if self.batch < 2 or self.batch % 2:
            raise InvalidArgument("batch must be a positive even number")
        if self.target_sync < 1 or self.learning_rate <= 0 or self.grad_clip <= 0:
            raise InvalidArgument("target_sync, learning_rate and grad_clip must be positive")
        if self.warmup < 0 or self.capacity < self.batch:
            raise InvalidArgument("warmup must be >= 0 and capacity >= batch")
        return self


@dataclass
class Experience:
    grid: np.ndarray
    aux: np.ndarray
    action: int
    reward: float
    next_grid: np.ndarray
    next_aux: np.ndarray
    done: bool


@dataclass
class Batch:
    grid: np.ndarray
    aux: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_grid: np.ndarray
    next_aux: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.action)

    @classmethod
    def of(cls, experiences) -> "Batch":
        ex = list(experiences)
        return cls(
            np.stack([e.grid for e in ex]), np.stack([e.aux for e in ex]),
            np.array([int(e.action) for e in ex]), np.array([e.reward for e in ex], dtype=float),
            np.stack([e.next_grid for e in ex]), np.stack([e.next_aux for e in ex]),
            np.array([bool(e.done) for e in ex]),
        )

    @classmethod
    def concat(cls, a: "Batch", b: "Batch") -> "Batch":
        return cls(*(np.concatenate([getattr(a, f), getattr(b, f)]) for f in cls.__dataclass_fields__))


class ReplayPool:
    """Fixed-capacity FIFO ring buffer of transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.grid = np.empty((capacity, *GRID_SHAPE))
        self.aux = np.empty((capacity, AUX_SIZE))
        self.action = np.empty(capacity, dtype=int)
        self.reward = np.empty(capacity)
        self.next_grid = np.empty((capacity, *GRID_SHAPE))
        self.next_aux = np.empty((capacity, AUX_SIZE))
        self.done = np.empty(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def add(self, e: Experience) -> None:
        i = self._head
        self.grid[i], self.aux[i], self.action[i], self.reward[i] = e.grid, e.aux, int(e.action), e.reward
        self.next_grid[i], self.next_aux[i], self.done[i] = e.next_grid, e.next_aux, e.done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def take(self, idx) -> Batch:
        return Batch(
            self.grid[idx], self.aux[idx], self.action[idx], self.reward[idx],
            self.next_grid[idx], self.next_aux[idx], self.done[idx],
        )

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        return self.take(rng.choice(self.size, size=n, replace=False))

    def actions(self) -> np.ndarray:
        return self.action[: self.size].copy()


class ReplayPools:
    """Keep-lane and lane-change experiences in separate pools, sampled half and half."""

    def __init__(self, capacity: int = 20000):
        self.keep_pool = ReplayPool(capacity)
        self.change_pool = ReplayPool(capacity)

    def __len__(self):
        return len(self.keep_pool) + len(self.change_pool)

    def add(self, e: Experience) -> None:
        (self.keep_pool if int(e.action) == Action.KEEP else self.change_pool).add(e)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch | None:
        """``batch/2`` from each pool; a short pool is backfilled from the other one."""
        if len(self) < batch:
            return None
        half = batch // 2
        n_change = min(half, len(self.change_pool))
        n_keep = min(batch - n_change, len(self.keep_pool))
        n_change = batch - n_keep
        parts = [p.sample(n, rng) for p, n in ((self.keep_pool, n_keep), (self.change_pool, n_change)) if n]
        return parts[0] if len(parts) == 1 else Batch.concat(*parts)


def td_targets(batch: Batch, net: QNetwork, target_net: QNetwork, gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q(s', a'; target) for live transitions, r at episode end."""
    reward = np.asarray(batch.reward, dtype=float)
    if gamma == 0:
        return reward.copy()
    q_next = target_net.forward(batch.next_grid, batch.next_aux)
    return reward + gamma * np.where(batch.done, 0.0, q_next.max(axis=1))


def train_step(
    net: QNetwork,
    target_net: QNetwork,
    pools: ReplayPools,
    config: TrainConfig,
    optimizer: Adam,
    rng: np.random.Generator,
) -> float | None:
    """One clipped Adam update on a split-pool mini-batch; None when not ready."""
    if len(pools) < max(config.warmup, 1):
        return None
    batch = pools.sample(config.batch, rng)
    if batch is None:
        return None
    y = td_targets(batch, net, target_net, config.gamma)
    loss, grads = net.loss_and_grads(batch.grid, batch.aux, batch.action, y)
    for k in grads:
        np.clip(grads[k], -config.grad_clip, config.grad_clip, out=grads[k])
    optimizer.step(net.params, grads)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    target_net.load_params(net.params)


def select_action(net: QNetwork, grid, aux, eps: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= eps <= 1.0:
        raise InvalidArgument("eps must lie in [0, 1]")
    if eps > 0 and rng.random() < eps:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(net.forward(grid, aux))))


class DQNAgent:
    """Online/target networks, optimizer, replay and exploration state for one run."""

    def __init__(self, config: TrainConfig = TrainConfig(), schedule: EpsilonSchedule = EpsilonSchedule(),
                 seed: int = 0, net: QNetwork | None = None):
        self.config = config.validate()
        self.schedule = schedule.validate()
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.net = net if net is not None else QNetwork(seed=int(seeds[0].generate_state(1)[0]))
        self.target = self.net.copy()
        self.optimizer = Adam(config.learning_rate)
        self.pools = ReplayPools(config.capacity)
        self.rng = np.random.default_rng(seeds[1])
        self.explore_rng = np.random.default_rng(seeds[2])
        self.updates = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value()

    def act(self, grid, aux) -> Action:
        action = select_action(self.net, grid, aux, self.epsilon, self.explore_rng)
        self.schedule = self.schedule.advance()
        return action

    def observe(self, e: Experience) -> float | None:
        self.pools.add(e)
        loss = train_step(self.net, self.target, self.pools, self.config, self.optimizer, self.rng)
        if loss is not None:
            self.updates += 1
            if self.updates % self.config.target_sync == 0:
                sync_target(self.net, self.target)
        return loss


# -- gradient verification ----------------------------------------------------
def gradient_check(net: QNetwork, probe_batch: Batch, **kwargs) -> float:
    """Max relative error between backprop and central differences of the TD loss."""
    return gradient_check_report(net, probe_batch, **kwargs)[0]


def gradient_check_report(
    net: QNetwork,
    probe_batch: Batch,
    n_params: int = 240,
    h: float = 1e-5,
    seed: int = 0,
    gamma: float = 0.95,
    grad_scale: dict | None = None,
    target_net: QNetwork | None = None,
) -> tuple[float, int]:
    """``(max relative error, coordinates compared)``.

    Targets are computed once and held fixed, as in the DQN update.  The same
    number of coordinates is drawn from every parameter tensor; coordinates
    whose +-h perturbation flips any ReLU are redrawn, since the loss is not
    differentiable across that kink.  ``grad_scale`` multiplies the analytic
    gradient of named tensors (used to show the check catches errors).
    """
    if len(probe_batch) > 4:
        raise InvalidArgument("probe batch must hold at most 4 transitions")
    b = probe_batch
    y = td_targets(b, net, target_net if target_net is not None else net.copy(), gamma)
    _, grads = net.loss_and_grads(b.grid, b.aux, b.action, y)
    for k, f in (grad_scale or {}).items():
        grads[k] = grads[k] * f
    base_masks = net.relu_masks(b.grid, b.aux)
    rng = np.random.default_rng(seed)
    per_tensor = math.ceil(n_params / len(PARAM_ORDER))
    worst, total = 0.0, 0
    for name in PARAM_ORDER:
        tensor = net.params[name]
        checked = attempts = 0
        while checked < per_tensor and attempts < 50 * per_tensor:
            attempts += 1
            idx = tuple(int(rng.integers(n)) for n in tensor.shape)
            old = tensor[idx]
            tensor[idx] = old + h
            up, up_masks = net.loss(b.grid, b.aux, b.action, y), net.relu_masks(b.grid, b.aux)
            tensor[idx] = old - h
            down, down_masks = net.loss(b.grid, b.aux, b.action, y), net.relu_masks(b.grid, b.aux)
            tensor[idx] = old
            if any(not (np.array_equal(m0, m1) and np.array_equal(m0, m2))
                   for m0, m1, m2 in zip(base_masks, up_masks, down_masks)):
                continue
            numeric = (up - down) / (2 * h)
            analytic = grads[name][idx]
            denom = max(abs(numeric), abs(analytic), 1e-7)
            worst = max(worst, abs(numeric - analytic) / denom)
            checked += 1
        total += checked
    return worst, total


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(net: QNetwork, schedule: EpsilonSchedule, path) -> None:
    """``LSRL1`` | u32 len + ASCII layer spec | u64 step | float64 params, all little-endian."""
    arch = net.arch.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<Q", int(schedule.step)))
        fh.write(net.flat_params().astype("<f8").tobytes())


def _parse_arch(arch: str) -> QNetwork:
    try:
        layers = [tuple(part.split(":")) for part in arch.split(";")]
        kinds = [k for k, _ in layers]
        dims = [tuple(int(v) for v in io.split(">")) for _, io in layers]
    except ValueError as exc:
        raise CheckpointFormatError(f"unreadable layer spec {arch!r}") from exc
    if kinds != ["conv3x3", "conv3x3", "dense", "dense", "dense", "dense"]:
        raise CheckpointFormatError(f"unsupported layer spec {arch!r}")
    net = QNetwork(conv_filters=(dims[0][1], dims[1][1]), grid_units=dims[2][1],
                   aux_units=dims[3][1], fusion_units=dims[4][1], seed=None)
    if net.arch != arch:
        raise CheckpointFormatError(f"inconsistent layer spec {arch!r}")
    return net


def load_checkpoint(path, like: QNetwork | None = None,
                    schedule: EpsilonSchedule = EpsilonSchedule()) -> tuple[QNetwork, EpsilonSchedule]:
    """Inverse of ``save_checkpoint``; ``like`` pins the expected architecture."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 4:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + n + 8 > len(data):
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        arch = data[pos:pos + n].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"{path}: layer spec is not ASCII") from exc
    pos += n
    (step,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if like is not None and like.arch != arch:
        raise CheckpointFormatError(f"{path}: architecture {arch!r} does not match {like.arch!r}")
    net = _parse_arch(arch)
    if len(data) - pos != 8 * net.n_params:
        raise CheckpointFormatError(f"{path}: expected {8 * net.n_params} parameter bytes, found {len(data) - pos}")
    net.set_flat_params(np.frombuffer(data, dtype="<f8", offset=pos).astype(float))
    return net, replace(schedule, step=int(step))
