"""Conditional noise-prediction policy: losses, guided noise, and samplers.

The denoising network maps concat(a_k, time_embed(k), s) to a predicted
noise vector. Training combines the denoising (behavior-cloning) loss with
a normalized value loss whose gradient reaches the network through a single
differentiable reconstruction step by default; full-chain backpropagation
is available behind ``q_grad_mode="chain"``. The IQL variant instead
weights the denoising loss by the guidance module's advantage exponent and
never carries a value term.

Generated actions are always clamped to the action box, and any inference
guidance handle is applied to the finished sample via ``guide_action``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InvalidInputError, KindMismatchError
from .guidance import grad_q_wrt_action, guide_action, q_min, q_min_target
from .schedule import (
    NoiseSchedule,
    ddpm_reverse_step,
    forward_noise,
    reconstruct_a0,
    reconstruction_coeff,
)

Q_NORMALIZER_FLOOR = 1e-3
SAMPLER_MODES = ("full_reverse", "one_step_edp")


def time_embedding(k, dim: int) -> np.ndarray:
    """Sinusoidal embedding of step index k; accepts scalars or arrays."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = k[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if emb.shape[1] < dim:  # odd dim: pad with a zero column
        emb = np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))
    return emb


@dataclass
class DiffusionPolicy:
    eps_net: nn.Mlp
    schedule: NoiseSchedule
    opt: nn.AdamState
    state_dim: int
    action_dim: int
    time_embed_dim: int = 16
    action_low: float = -1.0
    action_high: float = 1.0
    sampler_mode: str = "full_reverse"
    algorithm: str = "dql"
    seed: int = 0
    training_steps: int = 0

    def __post_init__(self):
        if self.sampler_mode not in SAMPLER_MODES:
            raise InvalidInputError(f"unknown sampler mode {self.sampler_mode!r}")
        expected_in = self.action_dim + self.time_embed_dim + self.state_dim
        if self.eps_net.in_dim != expected_in or self.eps_net.out_dim != self.action_dim:
            raise InvalidInputError(
                f"eps_net maps {self.eps_net.in_dim}->{self.eps_net.out_dim}, "
                f"expected {expected_in}->{self.action_dim}")


@dataclass
class LossBundle:
    """One actor step's losses; l_actor is the exact combination."""

    l_diff: float
    l_q: float
    eta: float
    l_actor: float = field(init=False)

    def __post_init__(self):
        self.l_actor = self.l_diff + self.eta * self.l_q


def make_policy(state_dim, action_dim, schedule, hidden_dims=(64, 64), seed=0,
                time_embed_dim=16, action_low=-1.0, action_high=1.0,
                sampler_mode="full_reverse", algorithm="dql", learning_rate=3e-4) -> DiffusionPolicy:
    rng = np.random.default_rng(seed)
    in_dim = action_dim + time_embed_dim + state_dim
    eps_net = nn.mlp_init([in_dim, *hidden_dims, action_dim], rng)
    return DiffusionPolicy(
        eps_net=eps_net,
        schedule=schedule,
        opt=nn.adam_init(eps_net, learning_rate),
        state_dim=state_dim,
        action_dim=action_dim,
        time_embed_dim=time_embed_dim,
        action_low=action_low,
        action_high=action_high,
        sampler_mode=sampler_mode,
        algorithm=algorithm,
        seed=seed,
    )


def _net_input(p: DiffusionPolicy, a_k: np.ndarray, k, s: np.ndarray) -> np.ndarray:
    a_k = np.atleast_2d(a_k)
    s = np.atleast_2d(s)
    k = np.broadcast_to(np.atleast_1d(k), (a_k.shape[0],))
    return np.concatenate([a_k, time_embedding(k, p.time_embed_dim), s], axis=1)


def _eps_forward(p: DiffusionPolicy, a_k, k, s) -> np.ndarray:
    """Noise prediction for (possibly batched) a_k at step(s) k given s."""
    return nn.forward(p.eps_net, _net_input(p, a_k, k, s))


def clamp_actions(p: DiffusionPolicy, a: np.ndarray) -> np.ndarray:
    return np.clip(a, p.action_low, p.action_high)


# ---------------------------------------------------------------------------
# Losses.

def _diffusion_loss_and_grads(p, states, actions, rng, weights=None):
    """Denoising MSE (optionally per-element weighted) and its eps_net grads.

    Per element the loss is ||eps_net(a_k, k, s) - eps||^2 with k uniform in
    1..K and eps standard normal; the batch loss averages mean(w_i * e_i).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    n = states.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    K = p.schedule.K
    k = rng.integers(1, K + 1, size=n)
    eps = rng.standard_normal((n, p.action_dim))
    a_k = forward_noise(p.schedule, actions, k, eps)
    x = _net_input(p, a_k, k, states)
    pred = nn.forward(p.eps_net, x)
    resid = pred - eps
    per_element = np.sum(resid**2, axis=1)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    loss = float(np.mean(w * per_element))
    grads, _ = nn.backward(p.eps_net, x, 2.0 * w[:, None] * resid / n)
    return loss, grads


def diffusion_loss(p: DiffusionPolicy, states, actions, rng) -> float:
    """Mean squared denoising error over the batch (no update applied)."""
    loss, _ = _diffusion_loss_and_grads(p, states, actions, rng)
    return loss


def _guidance_values_and_grads(g, states, actions):
    """(values, detached target values, dQ/da) for the q_loss head."""
    kind = getattr(g, "kind", None)
    if kind == "double_q":
        values = q_min(g, states, actions)
        targets = q_min_target(g, states, actions)
        dq_da = grad_q_wrt_action(g, states, actions)
    elif kind == "noise":
        n = len(np.atleast_2d(states))
        values = g.values(n)
        targets = g.values(n)
        dq_da = g.grads(n)
    elif kind == "iql":
        raise KindMismatchError("the value loss needs double-Q guidance; IQL trains by weighted BC")
    else:
        raise KindMismatchError(f"unsupported guidance kind {kind!r}")
    return values, targets, dq_da


def _q_loss_and_grads(p, g, states, rng, q_grad_mode="onestep"):
    """Normalized value loss -mean(Q)/max(|mean Q_target|, floor) and grads.

    ``onestep``: sample a0 with the active sampler (no grad), re-noise at a
    uniform k, reconstruct through one eps_net call, and differentiate
    through that call. ``chain``: generate by the full reverse chain and
    backpropagate through every step (full_reverse sampler only).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")

    if q_grad_mode == "chain":
        if p.sampler_mode != "full_reverse":
            raise InvalidInputError("chain gradients require the full_reverse sampler")
        return _q_loss_chain(p, g, states, rng)
    if q_grad_mode != "onestep":
        raise InvalidInputError(f"unknown q_grad_mode {q_grad_mode!r}")

    a_gen = sample_actions(p, states, rng)
    K = p.schedule.K
    k = rng.integers(1, K + 1, size=n)
    eps = rng.standard_normal((n, p.action_dim))
    a_k = forward_noise(p.schedule, a_gen, k, eps)
    x = _net_input(p, a_k, k, states)
    pred = nn.forward(p.eps_net, x)
    a0_hat = reconstruct_a0(p.schedule, a_k, k, pred)
    a0 = clamp_actions(p, a0_hat)
    in_box = (a0_hat == a0)

    values, targets, dq_da = _guidance_values_and_grads(g, states, a0)
    denom = max(abs(float(np.mean(targets))), Q_NORMALIZER_FLOOR)
    loss = -float(np.mean(values)) / denom

    dL_da0 = -dq_da / (n * denom) * in_box
    dL_dpred = dL_da0 * reconstruction_coeff(p.schedule, k)[:, None]
    grads, _ = nn.backward(p.eps_net, x, dL_dpred)
    return loss, grads


def _q_loss_chain(p, g, states, rng):
    """Full-chain variant: the generated action itself is the gradient path."""
    n = states.shape[0]
    K = p.schedule.K
    sched = p.schedule
    a = rng.standard_normal((n, p.action_dim))
    steps = []  # (k, net input, c1, c1*c2) from k=K down to 1
    for k in range(K, 0, -1):
        x = _net_input(p, a, k, states)
        pred = nn.forward(p.eps_net, x)
        c1 = 1.0 / np.sqrt(sched.alphas[k - 1])
        c2 = sched.betas[k - 1] / np.sqrt(1.0 - sched.alpha_bars[k - 1])
        steps.append((x, c1, c1 * c2))
        mean = c1 * (a - c2 * pred)
        a = mean if k == 1 else mean + np.sqrt(sched.betas[k - 1]) * rng.standard_normal(a.shape)

    a0 = clamp_actions(p, a)
    in_box = (a == a0)
    values, targets, dq_da = _guidance_values_and_grads(g, states, a0)
    denom = max(abs(float(np.mean(targets))), Q_NORMALIZER_FLOOR)
    loss = -float(np.mean(values)) / denom

    dL_da = -dq_da / (n * denom) * in_box
    total = nn.zero_grads_like(p.eps_net)
    for x, c1, c1c2 in reversed(steps):  # k = 1 upward
        grads, gin = nn.backward(p.eps_net, x, -c1c2 * dL_da)
        nn.add_grads(total, grads)
        dL_da = c1 * dL_da + gin[:, :p.action_dim]
    return loss, total


def q_loss(p: DiffusionPolicy, g, states, rng, q_grad_mode="onestep") -> float:
    """Normalized value loss of freshly sampled actions (no update applied)."""
    loss, _ = _q_loss_and_grads(p, g, states, rng, q_grad_mode)
    return loss


def actor_loss(p: DiffusionPolicy, g, batch, eta: float, rng, q_grad_mode="onestep") -> LossBundle:
    """One combined actor step: l_diff + eta * l_q, then one Adam update."""
    if eta < 0.0:
        raise InvalidInputError("eta must be non-negative")
    l_diff, g_diff = _diffusion_loss_and_grads(p, batch.states, batch.actions, rng)
    l_q, g_q = _q_loss_and_grads(p, g, batch.states, rng, q_grad_mode)
    total = g_diff
    nn.add_grads(total, g_q, scale=eta)
    nn.adam_step(p.eps_net, total, p.opt)
    p.training_steps += 1
    return LossBundle(l_diff=l_diff, l_q=l_q, eta=eta)


def iql_weighted_bc_loss(p: DiffusionPolicy, g, states, actions, rng) -> float:
    """Advantage-weighted denoising loss over dataset actions (no update)."""
    loss, _ = _iql_bc_loss_and_grads(p, g, states, actions, rng)
    return loss


def _iql_bc_loss_and_grads(p, g, states, actions, rng):
    from .guidance import advantage_weight

    if getattr(g, "kind", None) != "iql":
        raise KindMismatchError("weighted behavior cloning needs IQL guidance")
    w = advantage_weight(g, states, actions)
    return _diffusion_loss_and_grads(p, states, actions, rng, weights=np.atleast_1d(w))


def iql_actor_step(p: DiffusionPolicy, g, batch, rng) -> LossBundle:
    """One weighted-BC step; IDQL training never carries a value term."""
    loss, grads = _iql_bc_loss_and_grads(p, g, batch.states, batch.actions, rng)
    nn.adam_step(p.eps_net, grads, p.opt)
    p.training_steps += 1
    return LossBundle(l_diff=loss, l_q=0.0, eta=0.0)


def guided_eps(p: DiffusionPolicy, g, s, a_k, k, alpha: float) -> np.ndarray:
    """Value-aware noise prediction: eps_net output plus alpha * dQ/da at a_k."""
    if not np.isfinite(alpha):
        raise InvalidInputError("alpha must be finite")
    pred = _eps_forward(p, a_k, k, s)
    if alpha == 0.0:
        return pred
    return pred + alpha * grad_q_wrt_action(g, s, a_k)


# ---------------------------------------------------------------------------
# Sampling.

def sample_actions(p: DiffusionPolicy, states, rng, inference_guidance=None,
                   lam: float = 0.0, alpha: float = 0.0) -> np.ndarray:
    """Generate one action per state (batched); always inside the action box.

    full_reverse runs the K-step DDPM chain from a standard-normal prior;
    one_step_edp reconstructs directly from the prior at k = K. A non-zero
    ``alpha`` perturbs every noise prediction by the guidance gradient; a
    supplied ``inference_guidance`` handle post-shifts the finished action
    via ``guide_action`` with strength ``lam``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    K = p.schedule.K

    def predict(a, k):
        if alpha != 0.0 and inference_guidance is not None:
            return guided_eps(p, inference_guidance, states, a, k, alpha)
        return _eps_forward(p, a, k, states)

    a = rng.standard_normal((n, p.action_dim))
    if p.sampler_mode == "full_reverse":
        for k in range(K, 0, -1):
            a = ddpm_reverse_step(p.schedule, predict(a, k), a, k, rng)
    else:  # one_step_edp
        a = reconstruct_a0(p.schedule, a, K, predict(a, K))

    if inference_guidance is not None:
        a = guide_action(inference_guidance, states, a, lam, p.action_low, p.action_high)
    return clamp_actions(p, a)


def sample_action(p: DiffusionPolicy, s, rng, inference_guidance=None,
                  lam: float = 0.0, alpha: float = 0.0) -> np.ndarray:
    """Single-state convenience wrapper around ``sample_actions``."""
    return sample_actions(p, np.atleast_2d(s), rng, inference_guidance, lam, alpha)[0]
