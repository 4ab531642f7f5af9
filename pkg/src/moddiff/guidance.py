"""Value-estimation (guidance) modules, trainable purely from offline data.

Two kinds are provided: a double-Q pair with EMA target networks trained by
temporal difference, and an IQL pair (Q plus expectile-regressed V) whose
advantage exponent weights behavior cloning. Both expose the action
gradient of their value estimate, which is what the diffusion side consumes
at inference time; neither ever references a policy object.

A guidance object doubles as its own handle: ``kind``, ``frozen``, ``seed``
and ``training_steps`` live on the module, and every mutating operation
refuses to run once ``frozen`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs import OfflineDataset, TransitionBatch, sample_batch
from .errors import (
    FrozenModuleError,
    InvalidConfigError,
    InvalidInputError,
    KindMismatchError,
)

GRAD_NORM_FLOOR = 1e-8  # stationary-point guard for normalized-gradient steps


@dataclass
class DoubleQ:
    """Twin critics with EMA targets; q_min is the pessimistic estimate."""

    q1: nn.Mlp
    q2: nn.Mlp
    q1_target: nn.Mlp
    q2_target: nn.Mlp
    opt1: nn.AdamState
    opt2: nn.AdamState
    state_dim: int
    action_dim: int
    gamma: float = 0.99
    tau_ema: float = 0.005
    seed: int = 0
    training_steps: int = 0
    frozen: bool = False

    kind = "double_q"


@dataclass
class IqlGuidance:
    """Q network over (s, a) plus expectile-regressed state value V."""

    q: nn.Mlp
    v: nn.Mlp
    opt_q: nn.AdamState
    opt_v: nn.AdamState
    state_dim: int
    action_dim: int
    expectile: float = 0.7
    beta_weight: float = 3.0
    w_max: float = 100.0
    gamma: float = 0.99
    seed: int = 0
    training_steps: int = 0
    frozen: bool = False

    kind = "iql"

    def __post_init__(self):
        if not (0.0 < self.expectile < 1.0):
            raise InvalidConfigError(f"expectile must lie in (0, 1), got {self.expectile}")
        if self.beta_weight <= 0.0 or self.w_max <= 0.0:
            raise InvalidConfigError("beta_weight and w_max must be positive")


class NoiseGuidance:
    """Ablation stub: values and action gradients are fresh standard normals."""

    kind = "noise"
    frozen = True

    def __init__(self, state_dim: int, action_dim: int, seed: int = 0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.seed = seed
        self.training_steps = 0
        self._rng = np.random.default_rng(seed)

    def values(self, n: int) -> np.ndarray:
        return self._rng.standard_normal(n)

    def grads(self, n: int) -> np.ndarray:
        return self._rng.standard_normal((n, self.action_dim))


@dataclass
class GuidanceConfig:
    """Hyperparameters for building and pretraining a guidance module."""

    steps: int = 1000
    batch_size: int = 256
    hidden_dims: tuple = (64, 64)
    learning_rate: float = 3e-4
    gamma: float = 0.99
    tau_ema: float = 0.005
    expectile: float = 0.7
    beta_weight: float = 3.0
    w_max: float = 100.0
    seed: int = 0


def make_double_q(state_dim, action_dim, hidden_dims=(64, 64), seed=0,
                  gamma=0.99, tau_ema=0.005, learning_rate=3e-4) -> DoubleQ:
    rng = np.random.default_rng(seed)
    dims = [state_dim + action_dim, *hidden_dims, 1]
    q1 = nn.mlp_init(dims, rng)
    q2 = nn.mlp_init(dims, rng)
    return DoubleQ(
        q1=q1,
        q2=q2,
        q1_target=nn.clone_mlp(q1),
        q2_target=nn.clone_mlp(q2),
        opt1=nn.adam_init(q1, learning_rate),
        opt2=nn.adam_init(q2, learning_rate),
        state_dim=state_dim,
        action_dim=action_dim,
        gamma=gamma,
        tau_ema=tau_ema,
        seed=seed,
    )


def make_iql(state_dim, action_dim, hidden_dims=(64, 64), seed=0, gamma=0.99,
             expectile=0.7, beta_weight=3.0, w_max=100.0, learning_rate=3e-4) -> IqlGuidance:
    rng = np.random.default_rng(seed)
    q = nn.mlp_init([state_dim + action_dim, *hidden_dims, 1], rng)
    v = nn.mlp_init([state_dim, *hidden_dims, 1], rng)
    return IqlGuidance(
        q=q,
        v=v,
        opt_q=nn.adam_init(q, learning_rate),
        opt_v=nn.adam_init(v, learning_rate),
        state_dim=state_dim,
        action_dim=action_dim,
        expectile=expectile,
        beta_weight=beta_weight,
        w_max=w_max,
        gamma=gamma,
        seed=seed,
    )


def freeze(g) -> None:
    g.frozen = True


def _check_mutable(g) -> None:
    if getattr(g, "frozen", False):
        raise FrozenModuleError(f"guidance module (kind={g.kind}) is frozen")


def _sa(g, s, a) -> tuple[np.ndarray, bool]:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    a = np.atleast_2d(a)
    if s.shape[1] != g.state_dim or a.shape[1] != g.action_dim or s.shape[0] != a.shape[0]:
        raise InvalidInputError(
            f"state/action shapes {s.shape}/{a.shape} do not match dims ({g.state_dim}, {g.action_dim})")
    return np.concatenate([s, a], axis=1), single


def q_min(g: DoubleQ, s, a):
    """Pointwise minimum of the two online critics."""
    x, single = _sa(g, s, a)
    vals = np.minimum(nn.forward(g.q1, x)[:, 0], nn.forward(g.q2, x)[:, 0])
    return float(vals[0]) if single else vals


def q_min_target(g: DoubleQ, s, a):
    x, single = _sa(g, s, a)
    vals = np.minimum(nn.forward(g.q1_target, x)[:, 0], nn.forward(g.q2_target, x)[:, 0])
    return float(vals[0]) if single else vals


def _ema_update(target: nn.Mlp, online: nn.Mlp, tau: float) -> None:
    for pt, po in zip(nn.param_arrays(target), nn.param_arrays(online)):
        pt *= 1.0 - tau
        pt += tau * po


def td_update_double_q(g: DoubleQ, batch: TransitionBatch, next_action_sampler) -> float:
    """One TD step on both critics plus one EMA step on the targets.

    ``next_action_sampler(batch) -> a'`` supplies the bootstrap action:
    dataset successors during pretraining, policy samples during joint
    training. Returns the mean squared TD error across both critics.
    """
    _check_mutable(g)
    n = len(batch.rewards)
    if n == 0:
        raise InvalidInputError("empty batch")
    a_next = np.atleast_2d(np.asarray(next_action_sampler(batch), dtype=float))
    target_q = q_min_target(g, batch.next_states, a_next)
    y = batch.rewards + g.gamma * (1.0 - batch.terminals) * target_q

    x, _ = _sa(g, batch.states, batch.actions)
    loss = 0.0
    for net, opt in ((g.q1, g.opt1), (g.q2, g.opt2)):
        pred = nn.forward(net, x)[:, 0]
        err = pred - y
        loss += float(np.mean(err**2))
        grads, _ = nn.backward(net, x, (2.0 * err / n)[:, None])
        nn.adam_step(net, grads, opt)
    _ema_update(g.q1_target, g.q1, g.tau_ema)
    _ema_update(g.q2_target, g.q2, g.tau_ema)
    g.training_steps += 1
    return loss / 2.0


def expectile_loss(u, tau: float) -> np.ndarray:
    """Asymmetric squared loss |tau - 1{u < 0}| * u^2, elementwise."""
    u = np.asarray(u, dtype=float)
    return np.abs(tau - (u < 0.0)) * u * u


def iql_expectile_update(g: IqlGuidance, batch: TransitionBatch) -> float:
    """One expectile step on V and one TD step on Q (shared snapshot).

    V regresses toward Q(s, a) under the asymmetric expectile loss; Q
    regresses toward r + gamma * (1 - terminal) * V(s'). Returns the summed
    scalar loss.
    """
    _check_mutable(g)
    n = len(batch.rewards)
    if n == 0:
        raise InvalidInputError("empty batch")

    x, _ = _sa(g, batch.states, batch.actions)
    q_vals = nn.forward(g.q, x)[:, 0]
    s = np.atleast_2d(batch.states)
    v_vals = nn.forward(g.v, s)[:, 0]
    u = q_vals - v_vals
    v_loss = float(np.mean(expectile_loss(u, g.expectile)))
    # d/dv |tau - 1{u<0}| u^2 = -2 |tau - 1{u<0}| u
    dv = (-2.0 * np.abs(g.expectile - (u < 0.0)) * u / n)[:, None]
    v_grads, _ = nn.backward(g.v, s, dv)

    v_next = nn.forward(g.v, np.atleast_2d(batch.next_states))[:, 0]
    y = batch.rewards + g.gamma * (1.0 - batch.terminals) * v_next
    q_err = q_vals - y
    q_loss = float(np.mean(q_err**2))
    q_grads, _ = nn.backward(g.q, x, (2.0 * q_err / n)[:, None])

    nn.adam_step(g.v, v_grads, g.opt_v)
    nn.adam_step(g.q, q_grads, g.opt_q)
    g.training_steps += 1
    return v_loss + q_loss


def advantage_weight(g: IqlGuidance, s, a):
    """Clipped exponential advantage min(exp(beta * (Q - V)), w_max)."""
    if g.kind != "iql":
        raise KindMismatchError("advantage_weight needs an IQL guidance module")
    x, single = _sa(g, s, a)
    q_vals = nn.forward(g.q, x)[:, 0]
    v_vals = nn.forward(g.v, np.atleast_2d(np.asarray(s, dtype=float)))[:, 0]
    w = np.minimum(np.exp(g.beta_weight * (q_vals - v_vals)), g.w_max)
    return float(w[0]) if single else w


def grad_q_wrt_action(g, s, a):
    """dQ/da at (s, a), restricted to the action slice of the input.

    For double-Q the gradient runs through whichever critic attains the
    minimum (ties resolve to critic 1); for IQL it is the Q network's input
    gradient.
    """
    if g.kind == "noise":
        a = np.asarray(a, dtype=float)
        out = g.grads(1 if a.ndim == 1 else a.shape[0])
        return out[0] if a.ndim == 1 else out
    x, single = _sa(g, s, a)
    ones = np.ones((x.shape[0], 1))
    if g.kind == "double_q":
        v1 = nn.forward(g.q1, x)[:, 0]
        v2 = nn.forward(g.q2, x)[:, 0]
        _, gin1 = nn.backward(g.q1, x, ones)
        _, gin2 = nn.backward(g.q2, x, ones)
        pick1 = (v1 <= v2)[:, None]
        gin = np.where(pick1, gin1, gin2)
    elif g.kind == "iql":
        _, gin = nn.backward(g.q, x, ones)
    else:
        raise KindMismatchError(f"unknown guidance kind {g.kind!r}")
    grad = gin[:, g.state_dim:]
    return grad[0] if single else grad


def guide_action(g, s, a0, lam: float, low=-1.0, high=1.0):
    """Inference-time shift a0 + lam * dQ/da, clamped to the action box."""
    if not np.isfinite(lam):
        raise InvalidInputError("lambda must be finite")
    a0 = np.asarray(a0, dtype=float)
    shifted = a0 + lam * grad_q_wrt_action(g, s, a0)
    return np.clip(shifted, low, high)


def _resolve_grad_fn(g, state):
    if callable(g):
        return g
    if state is None:
        raise InvalidInputError("a guidance module needs an explicit state for the chain")
    return lambda a: grad_q_wrt_action(g, state, a)


def annealed_guided_chain(g, a_init, n_steps: int, step_sizes, temps, rng, state=None) -> np.ndarray:
    """Normalized-gradient ascent with annealed Gaussian noise.

    a_{t+1} = a_t + eta_t * grad/||grad|| + sqrt(2 tau_t) * xi_t. ``g`` is
    either a callable ``a -> grad`` or a guidance module (then ``state``
    must be given). Gradients with norm below 1e-8 count as stationary and
    contribute no drift. Returns the full (n_steps + 1, d) trajectory.
    """
    grad_fn = _resolve_grad_fn(g, state)
    etas = np.broadcast_to(np.asarray(step_sizes, dtype=float), (n_steps,))
    taus = np.broadcast_to(np.asarray(temps, dtype=float), (n_steps,))
    if np.any(etas <= 0.0) or np.any(taus < 0.0):
        raise InvalidInputError("step sizes must be positive and temperatures non-negative")
    a = np.asarray(a_init, dtype=float).copy()
    traj = np.empty((n_steps + 1, a.size))
    traj[0] = a
    for t in range(n_steps):
        grad = np.asarray(grad_fn(a), dtype=float)
        norm = np.linalg.norm(grad)
        direction = grad / norm if norm >= GRAD_NORM_FLOOR else np.zeros_like(a)
        a = a + etas[t] * direction
        if taus[t] > 0.0:
            a = a + np.sqrt(2.0 * taus[t]) * rng.standard_normal(a.shape)
        traj[t + 1] = a
    return traj


def pretrain_guidance(kind: str, dataset: OfflineDataset, config: GuidanceConfig):
    """Train a guidance module on offline data alone, then freeze it.

    Bootstrap actions come from the dataset's own successor actions; no
    policy is involved at any point. Returns the frozen module.
    """
    if len(dataset) == 0:
        raise InvalidConfigError("cannot pretrain guidance on an empty dataset")
    rng = np.random.default_rng(config.seed)
    if kind == "double_q":
        g = make_double_q(dataset.state_dim, dataset.action_dim, config.hidden_dims,
                          seed=config.seed, gamma=config.gamma, tau_ema=config.tau_ema,
                          learning_rate=config.learning_rate)
        for _ in range(config.steps):
            batch = sample_batch(dataset, config.batch_size, rng, with_next_actions=True)
            td_update_double_q(g, batch, lambda b: b.next_actions)
    elif kind == "iql":
        g = make_iql(dataset.state_dim, dataset.action_dim, config.hidden_dims,
                     seed=config.seed, gamma=config.gamma, expectile=config.expectile,
                     beta_weight=config.beta_weight, w_max=config.w_max,
                     learning_rate=config.learning_rate)
        for _ in range(config.steps):
            batch = sample_batch(dataset, config.batch_size, rng)
            iql_expectile_update(g, batch)
    else:
        raise InvalidConfigError(f"unknown guidance kind {kind!r}")
    freeze(g)
    return g
