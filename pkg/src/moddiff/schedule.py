"""K-step diffusion noise schedule and its three kernel computations.

Steps are indexed k = 1..K. ``alpha_bars[k-1]`` is the running product of
``alphas`` up to k. Forward noising, one-step clean-action reconstruction,
and the reverse DDPM transition all take k in that convention; the reverse
transition injects no noise at k = 1 and uses sigma_k^2 = beta_k otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

DEFAULT_K = 16
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.1


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        betas, alphas, alpha_bars = self.betas, self.alphas, self.alpha_bars
        if betas.ndim != 1 or len(betas) < 1:
            raise InvalidConfigError("schedule needs at least one step")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise InvalidConfigError("betas must lie strictly inside (0, 1)")
        if not np.array_equal(alphas, 1.0 - betas):
            raise InvalidConfigError("alphas must equal 1 - betas exactly")
        if np.any(np.diff(alpha_bars) >= 0.0) or alpha_bars[0] >= 1.0 or alpha_bars[-1] <= 0.0:
            raise InvalidConfigError("alpha_bars must be strictly decreasing within (0, 1)")
        if np.max(np.abs(alpha_bars - np.cumprod(alphas))) > 1e-12:
            raise InvalidConfigError("alpha_bars must be the running product of alphas")

    @property
    def K(self) -> int:
        return len(self.betas)


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=float)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def make_linear_schedule(K: int = DEFAULT_K, beta_min: float = DEFAULT_BETA_MIN,
                         beta_max: float = DEFAULT_BETA_MAX) -> NoiseSchedule:
    """Linearly interpolated betas from beta_min to beta_max over K steps."""
    if K < 1:
        raise InvalidConfigError(f"K must be >= 1, got {K}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise InvalidConfigError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, K) if K > 1 else np.array([beta_min])
    return schedule_from_betas(betas)


def _check_k(s: NoiseSchedule, k) -> np.ndarray:
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > s.K):
        raise InvalidInputError(f"step index {k} outside 1..{s.K}")
    return k


def forward_noise(s: NoiseSchedule, a0, k, eps) -> np.ndarray:
    """Noise a clean action: sqrt(abar_k) a0 + sqrt(1 - abar_k) eps.

    ``k`` may be a scalar or, for batched ``a0``/``eps`` of shape (n, d),
    an integer array of length n.
    """
    k = _check_k(s, k)
    a0 = np.asarray(a0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if a0.shape != eps.shape:
        raise InvalidInputError(f"a0 shape {a0.shape} and eps shape {eps.shape} differ")
    ab = s.alpha_bars[k - 1]
    if a0.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def reconstruct_a0(s: NoiseSchedule, ak, k, eps_pred) -> np.ndarray:
    """One-step inversion: ak / sqrt(abar_k) - sqrt(1 - abar_k)/sqrt(abar_k) * eps_pred."""
    k = _check_k(s, k)
    ak = np.asarray(ak, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    if ak.shape != eps_pred.shape:
        raise InvalidInputError(f"ak shape {ak.shape} and eps_pred shape {eps_pred.shape} differ")
    ab = s.alpha_bars[k - 1]
    if ak.ndim == 2 and np.ndim(ab) == 1:
        ab = ab[:, None]
    sqrt_ab = np.sqrt(ab)
    return ak / sqrt_ab - np.sqrt(1.0 - ab) / sqrt_ab * eps_pred


def reconstruction_coeff(s: NoiseSchedule, k) -> np.ndarray:
    """d(reconstruct_a0)/d(eps_pred) = -sqrt(1 - abar_k)/sqrt(abar_k)."""
    k = _check_k(s, k)
    ab = s.alpha_bars[k - 1]
    return -np.sqrt(1.0 - ab) / np.sqrt(ab)


def ddpm_reverse_step(s: NoiseSchedule, eps_pred, ak, k: int, rng) -> np.ndarray:
    """One reverse transition a_k -> a_{k-1}.

    Posterior mean (1/sqrt(alpha_k)) (ak - beta_k/sqrt(1 - abar_k) * eps_pred),
    plus sqrt(beta_k) * z with z standard normal for k > 1 and z = 0 at the
    terminal step k = 1. Accepts single vectors or (n, d) batches; the noise
    draw matches the batch shape.
    """
    k = int(k)
    _check_k(s, k)
    ak = np.asarray(ak, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    if ak.shape != eps_pred.shape:
        raise InvalidInputError(f"ak shape {ak.shape} and eps_pred shape {eps_pred.shape} differ")
    beta = s.betas[k - 1]
    alpha = s.alphas[k - 1]
    ab = s.alpha_bars[k - 1]
    mean = (ak - beta / np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(alpha)
    if k == 1:
        return mean
    return mean + np.sqrt(beta) * rng.standard_normal(ak.shape)
