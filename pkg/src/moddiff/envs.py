"""Desk-scale deterministic control environments and tiered offline datasets.

Both environments have deterministic dynamics, so a dataset recorded as
whole episodes is automatically a coherent batch: every non-terminal next
state reappears as the state of the following transition. Datasets mirror
the usual offline-RL quality tiers (expert / medium / medium_expert /
medium_replay) by running the analytic expert controller under increasing
amounts of action noise.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointFormatError,
    InvalidConfigError,
    InvalidInputError,
    MissingAnchorError,
)

TIERS = ("expert", "medium", "medium_expert", "medium_replay")
MEDIUM_SIGMA = 0.3
REPLAY_SIGMAS = (0.1, 0.3, 0.6, 1.0)

_ANCHOR_SEED = 20240  # fixed so normalization anchors are reproducible
_ANCHOR_EPISODES = 200


class ToyEnv:
    """Base class: deterministic dynamics, box actions, fixed horizon.

    ``transition(s, a)`` is the pure vectorized core (no episode state);
    ``reset``/``step`` wrap it with a per-episode step counter so that
    ``step`` reports terminal exactly when the counter reaches the horizon.
    """

    name: str
    state_dim: int
    action_dim: int
    action_low: float = -1.0
    action_high: float = 1.0
    horizon: int

    def __init__(self):
        self._t = 0

    def transition(self, s: np.ndarray, a: np.ndarray):
        """Pure dynamics: (states, actions) -> (next_states, rewards). Vectorized."""
        raise NotImplementedError

    def sample_initial(self, rng, n: int = 1) -> np.ndarray:
        raise NotImplementedError

    def expert_action(self, s: np.ndarray) -> np.ndarray:
        """Analytic near-optimal controller, vectorized over states."""
        raise NotImplementedError

    def clip_action(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.action_low, self.action_high)

    def reset(self, rng) -> np.ndarray:
        self._t = 0
        return self.sample_initial(rng, 1)[0]

    def step(self, s, a):
        """One stateful step: returns (s', r, terminal). Clamps a to the box."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = self.clip_action(np.atleast_2d(np.asarray(a, dtype=float)))
        s_next, r = self.transition(s, a)
        self._t += 1
        terminal = self._t >= self.horizon
        return s_next[0], float(r[0]), terminal


class PointReach2D(ToyEnv):
    """Velocity-controlled point mass steering to a goal.

    State (px, py, gx, gy); action is a velocity in [-1, 1]^2 applied with
    dt = 0.1; reward is the negative post-step distance to the goal.
    """

    name = "point2d"
    state_dim = 4
    action_dim = 2
    horizon = 40
    dt = 0.1

    def transition(self, s, a):
        pos, goal = s[:, :2], s[:, 2:]
        new_pos = pos + self.dt * a
        reward = -np.linalg.norm(new_pos - goal, axis=1)
        return np.concatenate([new_pos, goal], axis=1), reward

    def sample_initial(self, rng, n=1):
        return rng.uniform(-1.0, 1.0, size=(n, 4))

    def expert_action(self, s):
        pos, goal = s[:, :2], s[:, 2:]
        return np.clip((goal - pos) / self.dt, self.action_low, self.action_high)


class LinReg1D(ToyEnv):
    """Scalar linear-quadratic regulator: s' = s + a, stage cost s^2 + 0.1 a^2."""

    name = "linreg1d"
    state_dim = 1
    action_dim = 1
    horizon = 20

    def transition(self, s, a):
        reward = -(s[:, 0] ** 2 + 0.1 * a[:, 0] ** 2)
        return s + a, reward

    def sample_initial(self, rng, n=1):
        return rng.uniform(-2.0, 2.0, size=(n, 1))

    def expert_action(self, s):
        return np.clip(-s, self.action_low, self.action_high)


ENV_REGISTRY = {PointReach2D.name: PointReach2D, LinReg1D.name: LinReg1D}


def make_env(name: str) -> ToyEnv:
    if name not in ENV_REGISTRY:
        raise InvalidConfigError(f"unknown environment {name!r}; known: {sorted(ENV_REGISTRY)}")
    return ENV_REGISTRY[name]()


@dataclass
class OfflineDataset:
    """Columnar batch of transitions recorded as whole episodes, in order."""

    env_name: str
    tier: str
    seed: int
    horizon: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def next_actions(self) -> np.ndarray:
        """Successor action a'[i] = a[i+1] within each episode; zeros at terminals.

        Valid because episodes are recorded contiguously and terminal marks
        each episode's last transition; terminal rows are masked out of TD
        targets anyway.
        """
        nxt = np.zeros_like(self.actions)
        nonterm = self.terminals[:-1] == 0.0
        nxt[:-1][nonterm] = self.actions[1:][nonterm]
        return nxt


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    next_actions: np.ndarray | None = None


def sample_batch(ds: OfflineDataset, batch_size: int, rng, with_next_actions=False) -> TransitionBatch:
    if len(ds) == 0:
        raise InvalidInputError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=batch_size)
    nxt = ds.next_actions()[idx] if with_next_actions else None
    return TransitionBatch(
        states=ds.states[idx],
        actions=ds.actions[idx],
        rewards=ds.rewards[idx],
        next_states=ds.next_states[idx],
        terminals=ds.terminals[idx],
        next_actions=nxt,
    )


def _tier_controller(env: ToyEnv, tier: str, episode_index: int, rng):
    """Per-episode behavior policy for a tier. Returns a (states)->actions callable."""
    if tier == "expert":
        sigma = 0.0
    elif tier == "medium":
        sigma = MEDIUM_SIGMA
    elif tier == "medium_expert":
        sigma = 0.0 if episode_index % 2 == 0 else MEDIUM_SIGMA
    elif tier == "medium_replay":
        sigma = REPLAY_SIGMAS[episode_index % len(REPLAY_SIGMAS)]
    else:
        raise InvalidConfigError(f"unknown tier {tier!r}; known: {TIERS}")

    def act(states):
        a = env.expert_action(states)
        if sigma > 0.0:
            a = a + rng.normal(0.0, sigma, size=a.shape)
        return env.clip_action(a)

    return act


def generate_dataset(env: ToyEnv, tier: str, n_transitions: int, seed: int) -> OfflineDataset:
    """Roll tier-specific behavior for ceil(n/horizon) whole episodes.

    Whole episodes keep the batch coherent by construction; the count is
    rounded up rather than truncated mid-episode.
    """
    if tier not in TIERS:
        raise InvalidConfigError(f"unknown tier {tier!r}; known: {TIERS}")
    if n_transitions < env.horizon:
        raise InvalidInputError(f"need at least one episode ({env.horizon} transitions), got {n_transitions}")
    n_episodes = -(-n_transitions // env.horizon)
    rng = np.random.default_rng(seed)

    states, actions, rewards, next_states, terminals = [], [], [], [], []
    for ep in range(n_episodes):
        act = _tier_controller(env, tier, ep, rng)
        s = env.sample_initial(rng, 1)
        for t in range(env.horizon):
            a = act(s)
            s_next, r = env.transition(s, a)
            states.append(s[0])
            actions.append(a[0])
            rewards.append(r[0])
            next_states.append(s_next[0])
            terminals.append(1.0 if t == env.horizon - 1 else 0.0)
            s = s_next

    return OfflineDataset(
        env_name=env.name,
        tier=tier,
        seed=seed,
        horizon=env.horizon,
        states=np.array(states),
        actions=np.array(actions),
        rewards=np.array(rewards),
        next_states=np.array(next_states),
        terminals=np.array(terminals),
    )


def check_coherence(ds: OfflineDataset) -> bool:
    """Every non-terminal next state must reappear as some transition's state."""
    seen = {s.tobytes() for s in ds.states}
    for s_next, term in zip(ds.next_states, ds.terminals):
        if term == 0.0 and s_next.tobytes() not in seen:
            return False
    return True


def rollout_returns(env: ToyEnv, controller, n_episodes: int, seed: int) -> np.ndarray:
    """Raw returns of ``controller(states, rng) -> actions`` over full episodes.

    Episodes run in lockstep (all share the fixed horizon); per-episode
    init seeds derive from ``seed`` and one shared stream drives any
    controller randomness.
    """
    inits = [env.sample_initial(np.random.default_rng([seed, i]), 1)[0] for i in range(n_episodes)]
    s = np.array(inits)
    rng = np.random.default_rng([seed, n_episodes, 1])
    total = np.zeros(n_episodes)
    for _ in range(env.horizon):
        a = env.clip_action(np.asarray(controller(s, rng), dtype=float))
        s, r = env.transition(s, a)
        total += r
    return total


def random_controller(env: ToyEnv):
    def act(states, rng):
        return rng.uniform(env.action_low, env.action_high, size=(len(states), env.action_dim))
    return act


def expert_controller(env: ToyEnv):
    def act(states, rng):
        return env.expert_action(states)
    return act


_ANCHOR_CACHE: dict[str, tuple[float, float]] = {}


def anchor_scores(env: ToyEnv) -> tuple[float, float]:
    """(random_score, expert_score) anchors, computed once per env and cached."""
    if env.name not in _ANCHOR_CACHE:
        if env.name not in ENV_REGISTRY:
            raise MissingAnchorError(env.name)
        random_score = float(np.mean(rollout_returns(env, random_controller(env), _ANCHOR_EPISODES, _ANCHOR_SEED)))
        expert_score = float(np.mean(rollout_returns(env, expert_controller(env), _ANCHOR_EPISODES, _ANCHOR_SEED)))
        _ANCHOR_CACHE[env.name] = (random_score, expert_score)
    return _ANCHOR_CACHE[env.name]


def normalized_return(env: ToyEnv, raw_return) -> np.ndarray | float:
    """100 * (raw - random_score) / (expert_score - random_score)."""
    random_score, expert_score = anchor_scores(env)
    out = 100.0 * (np.asarray(raw_return, dtype=float) - random_score) / (expert_score - random_score)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Binary dataset files: magic + header + little-endian f64 columns + crc32.

_DATASET_MAGIC = b"MODDSET1"
_DATASET_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    return buf[off:off + n].decode("utf-8"), off + n


def dataset_to_bytes(ds: OfflineDataset) -> bytes:
    parts = [
        _DATASET_MAGIC,
        struct.pack("<I", _DATASET_VERSION),
        _pack_str(ds.env_name),
        _pack_str(ds.tier),
        struct.pack("<IIIQQ", ds.state_dim, ds.action_dim, ds.horizon, len(ds), ds.seed),
    ]
    for col in (ds.states, ds.actions, ds.rewards, ds.next_states, ds.terminals):
        parts.append(np.ascontiguousarray(col, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_dataset(ds: OfflineDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(ds))


def dataset_from_bytes(buf: bytes) -> OfflineDataset:
    if len(buf) < len(_DATASET_MAGIC) + 8:
        raise CheckpointFormatError("dataset file truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError("dataset checksum mismatch")
    if body[:8] != _DATASET_MAGIC:
        raise CheckpointFormatError("not a dataset file (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != _DATASET_VERSION:
        raise CheckpointFormatError(f"unsupported dataset version {version}")
    env_name, off = _unpack_str(body, off)
    tier, off = _unpack_str(body, off)
    state_dim, action_dim, horizon, count, seed = struct.unpack_from("<IIIQQ", body, off)
    off += struct.calcsize("<IIIQQ")
    if env_name not in ENV_REGISTRY:
        raise CheckpointFormatError(f"dataset references unknown environment {env_name!r}")
    env_cls = ENV_REGISTRY[env_name]
    if (state_dim, action_dim, horizon) != (env_cls.state_dim, env_cls.action_dim, env_cls.horizon):
        raise CheckpointFormatError(f"dataset fingerprint does not match environment {env_name!r}")

    def col(shape):
        nonlocal off
        n = int(np.prod(shape)) * 8
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += n
        return arr

    ds = OfflineDataset(
        env_name=env_name,
        tier=tier,
        seed=seed,
        horizon=horizon,
        states=col((count, state_dim)),
        actions=col((count, action_dim)),
        rewards=col((count,)),
        next_states=col((count, state_dim)),
        terminals=col((count,)),
    )
    if off != len(body):
        raise CheckpointFormatError("dataset file has trailing or missing bytes")
    return ds


def load_dataset(path) -> OfflineDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def dataset_hash(path) -> str:
    import hashlib

    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
