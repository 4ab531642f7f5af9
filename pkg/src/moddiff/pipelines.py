"""Training regimens, checkpoint series, and plug-and-play composition.

Four regimen families share one loop: joint interleaves one guidance update
and one policy update per gradient step; guidance-first (GFDT) pretrains
and freezes the guidance before any policy step; double guidance pretrains
a second, differently seeded module that evaluation attaches at inference
time; the ablations replace the value signal with nothing (eta = 0) or with
fresh noise. Every run emits a (guidance, policy) checkpoint pair at step 0
and every ``checkpoint_interval`` steps, a per-step loss log, a resolved
config, and a manifest tying them together.

All randomness flows from the three seeds in the config, so identical
configs produce byte-identical checkpoint series.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .envs import ENV_REGISTRY, OfflineDataset, TIERS, dataset_to_bytes, make_env, sample_batch
from .errors import CompositionError, InvalidConfigError
from .guidance import (
    DoubleQ,
    GuidanceConfig,
    IqlGuidance,
    NoiseGuidance,
    iql_expectile_update,
    pretrain_guidance,
    td_update_double_q,
)
from .policy import DiffusionPolicy, actor_loss, iql_actor_step, make_policy, sample_actions
from .schedule import make_linear_schedule

ALGORITHMS = ("dql", "idql", "edp")
REGIMENS = ("joint", "gfdt", "double_guidance", "no_guidance", "noise_guidance", "gfdt_unfrozen")

# regimens whose evaluation attaches no inference-time guidance
_EVAL_INFERENCE = {
    "joint": "same",
    "gfdt": "same",
    "gfdt_unfrozen": "same",
    "double_guidance": "different",
    "no_guidance": "none",
    "noise_guidance": "none",
}


@dataclass
class TrainConfig:
    algorithm: str = "dql"
    regimen: str = "joint"
    env_name: str = "point2d"
    dataset_tier: str = "medium"
    total_steps: int = 6000
    batch_size: int = 256
    checkpoint_interval: int = 400
    guidance_pretrain_steps: int | None = None  # defaults to total_steps // 4
    eta: float = 1.0
    lam: float = 0.1
    alpha: float = 0.0
    guidance_seed: int = 0
    policy_seed: int = 1
    inference_guidance_seed: int = 2
    eval_episodes: int = 50
    gamma: float = 0.99
    tau_ema: float = 0.005
    expectile: float = 0.7
    beta_weight: float = 3.0
    w_max: float = 100.0
    learning_rate: float = 3e-4
    hidden_dims: tuple = (64, 64)
    diffusion_steps: int = 16
    beta_min: float = 1e-4
    beta_max: float = 0.1
    time_embed_dim: int = 16
    q_grad_mode: str = "onestep"

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.algorithm not in ALGORITHMS:
            raise InvalidConfigError(f"unknown algorithm {self.algorithm!r}; known: {ALGORITHMS}")
        if self.regimen not in REGIMENS:
            raise InvalidConfigError(f"unknown regimen {self.regimen!r}; known: {REGIMENS}")
        if self.env_name not in ENV_REGISTRY:
            raise InvalidConfigError(f"unknown environment {self.env_name!r}")
        if self.dataset_tier not in TIERS:
            raise InvalidConfigError(f"unknown tier {self.dataset_tier!r}")
        if self.total_steps < 0 or self.batch_size < 1 or self.checkpoint_interval < 1:
            raise InvalidConfigError("total_steps >= 0, batch_size >= 1, checkpoint_interval >= 1 required")
        if self.eta < 0.0:
            raise InvalidConfigError("eta must be non-negative")
        if self.eval_episodes < 1:
            raise InvalidConfigError("eval_episodes must be >= 1")
        if self.regimen == "double_guidance" and self.inference_guidance_seed == self.guidance_seed:
            raise InvalidConfigError("double guidance requires inference_guidance_seed != guidance_seed")
        if self.regimen in ("no_guidance", "noise_guidance") and self.algorithm == "idql":
            raise InvalidConfigError("the guidance ablations apply to the eta-form algorithms (dql, edp)")
        if self.q_grad_mode not in ("onestep", "chain"):
            raise InvalidConfigError(f"unknown q_grad_mode {self.q_grad_mode!r}")
        if self.guidance_pretrain_steps is None:
            self.guidance_pretrain_steps = self.total_steps // 4

    @property
    def guidance_kind(self) -> str:
        return "iql" if self.algorithm == "idql" else "double_q"

    @property
    def sampler_mode(self) -> str:
        return "one_step_edp" if self.algorithm == "edp" else "full_reverse"


# Config files use the key "lambda"; the dataclass field is ``lam``.
_FILE_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_FILE_KEY = {v: k for k, v in _FILE_KEY_TO_FIELD.items()}


def config_to_dict(config: TrainConfig) -> dict:
    out = {}
    for name, value in asdict(config).items():
        out[_FIELD_TO_FILE_KEY.get(name, name)] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(data: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    kwargs = {}
    for key, value in data.items():
        name = _FILE_KEY_TO_FIELD.get(key, key)
        if name not in known:
            raise InvalidConfigError(f"unknown config key {key!r}")
        kwargs[name] = value
    return TrainConfig(**kwargs)


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunResult:
    out_dir: Path
    checkpoint_steps: list[int]
    checkpoints: list[dict]
    manifest_path: Path
    loss_log_path: Path
    policy: DiffusionPolicy
    guidance: object
    inference_guidance: object | None = None


def _make_training_guidance(config: TrainConfig, dataset: OfflineDataset):
    """Build (or pretrain) the guidance module the policy trains against."""
    from .guidance import make_double_q, make_iql

    if config.regimen in ("gfdt", "gfdt_unfrozen", "double_guidance"):
        gcfg = GuidanceConfig(
            steps=config.guidance_pretrain_steps, batch_size=config.batch_size,
            hidden_dims=config.hidden_dims, learning_rate=config.learning_rate,
            gamma=config.gamma, tau_ema=config.tau_ema, expectile=config.expectile,
            beta_weight=config.beta_weight, w_max=config.w_max, seed=config.guidance_seed)
        g = pretrain_guidance(config.guidance_kind, dataset, gcfg)
        if config.regimen == "gfdt_unfrozen":
            g.frozen = False  # ablation: keep updating during policy training
        return g
    if config.guidance_kind == "double_q":
        return make_double_q(dataset.state_dim, dataset.action_dim, config.hidden_dims,
                             seed=config.guidance_seed, gamma=config.gamma,
                             tau_ema=config.tau_ema, learning_rate=config.learning_rate)
    return make_iql(dataset.state_dim, dataset.action_dim, config.hidden_dims,
                    seed=config.guidance_seed, gamma=config.gamma, expectile=config.expectile,
                    beta_weight=config.beta_weight, w_max=config.w_max,
                    learning_rate=config.learning_rate)


def run_training(config: TrainConfig, dataset: OfflineDataset, out_dir) -> RunResult:
    """Execute one training run and write its artifact set into ``out_dir``."""
    if dataset.env_name != config.env_name:
        raise InvalidConfigError(
            f"dataset is for {dataset.env_name!r} but config names {config.env_name!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))

    schedule = make_linear_schedule(config.diffusion_steps, config.beta_min, config.beta_max)
    guidance = _make_training_guidance(config, dataset)
    policy = make_policy(
        dataset.state_dim, dataset.action_dim, schedule,
        hidden_dims=config.hidden_dims, seed=config.policy_seed,
        time_embed_dim=config.time_embed_dim, sampler_mode=config.sampler_mode,
        algorithm=config.algorithm, learning_rate=config.learning_rate)

    inference_guidance = None
    inference_path = None
    if config.regimen == "double_guidance":
        gcfg_b = GuidanceConfig(
            steps=config.guidance_pretrain_steps, batch_size=config.batch_size,
            hidden_dims=config.hidden_dims, learning_rate=config.learning_rate,
            gamma=config.gamma, tau_ema=config.tau_ema, expectile=config.expectile,
            beta_weight=config.beta_weight, w_max=config.w_max,
            seed=config.inference_guidance_seed)
        inference_guidance = pretrain_guidance(config.guidance_kind, dataset, gcfg_b)
        inference_path = out_dir / "guidance_b.ckpt"
        save_checkpoint(inference_guidance, inference_path)

    loss_guidance = guidance
    if config.regimen == "noise_guidance":
        loss_guidance = NoiseGuidance(dataset.state_dim, dataset.action_dim, config.guidance_seed)
    eta = 0.0 if config.regimen == "no_guidance" else config.eta
    trains_guidance = config.regimen in ("joint", "no_guidance", "gfdt_unfrozen")

    guidance_rng = np.random.default_rng(config.guidance_seed)
    policy_rng = np.random.default_rng(config.policy_seed)

    def policy_next_actions(batch):
        return sample_actions(policy, batch.next_states, guidance_rng)

    checkpoints = []

    def write_pair(step):
        gp = out_dir / f"guidance_step{step:06d}.ckpt"
        pp = out_dir / f"policy_step{step:06d}.ckpt"
        save_checkpoint(guidance, gp)
        save_checkpoint(policy, pp)
        checkpoints.append({"step": step, "guidance": gp.name, "policy": pp.name})

    write_pair(0)
    loss_rows = []
    for step in range(1, config.total_steps + 1):
        if trains_guidance:
            gbatch = sample_batch(dataset, config.batch_size, guidance_rng)
            if config.guidance_kind == "double_q":
                td_update_double_q(guidance, gbatch, policy_next_actions)
            else:
                iql_expectile_update(guidance, gbatch)
        pbatch = sample_batch(dataset, config.batch_size, policy_rng)
        if config.algorithm == "idql":
            bundle = iql_actor_step(policy, guidance, pbatch, policy_rng)
        else:
            bundle = actor_loss(policy, loss_guidance, pbatch, eta, policy_rng,
                                q_grad_mode=config.q_grad_mode)
        loss_rows.append((step, bundle.l_diff, bundle.l_q, bundle.l_actor))
        if step % config.checkpoint_interval == 0:
            write_pair(step)

    loss_log_path = out_dir / "losses.csv"
    with open(loss_log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_diff", "l_q", "l_actor"])
        writer.writerows(loss_rows)

    manifest = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "dataset_hash": hashlib.sha256(dataset_to_bytes(dataset)).hexdigest(),
        "env": config.env_name,
        "algorithm": config.algorithm,
        "regimen": config.regimen,
        "lambda": config.lam,
        "alpha": config.alpha,
        "eval_inference": _EVAL_INFERENCE[config.regimen],
        "checkpoints": checkpoints,
        "inference_guidance": inference_path.name if inference_path else None,
        "loss_log": loss_log_path.name,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))

    return RunResult(
        out_dir=out_dir,
        checkpoint_steps=[c["step"] for c in checkpoints],
        checkpoints=checkpoints,
        manifest_path=manifest_path,
        loss_log_path=loss_log_path,
        policy=policy,
        guidance=guidance,
        inference_guidance=inference_guidance,
    )


def train_joint(config: TrainConfig, dataset: OfflineDataset, out_dir) -> RunResult:
    if config.regimen != "joint":
        raise InvalidConfigError("train_joint requires regimen='joint'")
    return run_training(config, dataset, out_dir)


def train_gfdt(config: TrainConfig, dataset: OfflineDataset, out_dir) -> RunResult:
    if config.regimen not in ("gfdt", "gfdt_unfrozen"):
        raise InvalidConfigError("train_gfdt requires regimen 'gfdt' or 'gfdt_unfrozen'")
    return run_training(config, dataset, out_dir)


def train_double_guidance(config: TrainConfig, dataset: OfflineDataset, out_dir) -> RunResult:
    if config.regimen != "double_guidance":
        raise InvalidConfigError("train_double_guidance requires regimen='double_guidance'")
    return run_training(config, dataset, out_dir)


def run_ablation(config: TrainConfig, dataset: OfflineDataset, out_dir) -> RunResult:
    if config.regimen not in ("no_guidance", "noise_guidance"):
        raise InvalidConfigError("run_ablation requires regimen 'no_guidance' or 'noise_guidance'")
    return run_training(config, dataset, out_dir)


@dataclass
class HybridAgent:
    """A policy plus (optionally) detached guidance modules, evaluation-ready."""

    policy: DiffusionPolicy
    training_guidance: object | None = None
    inference_guidance: object | None = None
    lam: float = 0.0
    alpha: float = 0.0

    def act(self, states, rng) -> np.ndarray:
        return sample_actions(self.policy, states, rng,
                              inference_guidance=self.inference_guidance,
                              lam=self.lam, alpha=self.alpha)


def compose_modules(guidance_module, policy_module, lam: float = 0.1) -> HybridAgent:
    """Pair any guidance checkpoint with any policy checkpoint of equal dims.

    Dimension equality is the only legality check; kinds never matter.
    """
    if not isinstance(guidance_module, (DoubleQ, IqlGuidance)):
        raise CompositionError(f"{type(guidance_module).__name__} is not a guidance module")
    if not isinstance(policy_module, DiffusionPolicy):
        raise CompositionError(f"{type(policy_module).__name__} is not a policy module")
    if (guidance_module.state_dim, guidance_module.action_dim) != \
            (policy_module.state_dim, policy_module.action_dim):
        raise CompositionError(
            f"composition-incompatible: guidance dims "
            f"({guidance_module.state_dim}, {guidance_module.action_dim}) vs policy dims "
            f"({policy_module.state_dim}, {policy_module.action_dim})")
    return HybridAgent(policy=policy_module, inference_guidance=guidance_module, lam=lam)


def compose_from_paths(guidance_path, policy_path, lam: float = 0.1) -> HybridAgent:
    return compose_modules(load_checkpoint(guidance_path), load_checkpoint(policy_path), lam)
