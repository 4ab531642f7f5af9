"""Checkpoint evaluation protocol: seeded rollouts and normalized returns.

Episodes run in lockstep (both toy environments have a fixed horizon), with
per-episode reset seeds derived deterministically from the evaluation seed
and one shared stream for sampler noise. The same agent evaluated twice
under the same seed yields bit-identical return lists.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .envs import ToyEnv, make_env, normalized_return
from .errors import InvalidInputError
from .pipelines import HybridAgent
from .policy import DiffusionPolicy, sample_actions


class PolicyAgent:
    """Evaluation wrapper: diffusion policy plus optional inference guidance."""

    def __init__(self, policy: DiffusionPolicy, guidance=None, lam: float = 0.0, alpha: float = 0.0):
        self.policy = policy
        self.guidance = guidance
        self.lam = lam
        self.alpha = alpha

    def act(self, states, rng) -> np.ndarray:
        return sample_actions(self.policy, states, rng,
                              inference_guidance=self.guidance, lam=self.lam, alpha=self.alpha)


class ControllerAgent:
    """Wraps a plain (states, rng) -> actions callable (experts, random)."""

    def __init__(self, fn):
        self.fn = fn

    def act(self, states, rng) -> np.ndarray:
        return self.fn(states, rng)


def evaluate_checkpoint(agent, env: ToyEnv, n_episodes: int = 50, eval_seed: int = 0) -> np.ndarray:
    """Normalized returns of ``n_episodes`` seeded rollouts of ``agent``."""
    if n_episodes < 1:
        raise InvalidInputError("n_episodes must be >= 1")
    states = np.array([
        env.sample_initial(np.random.default_rng([eval_seed, i]), 1)[0]
        for i in range(n_episodes)
    ])
    if states.shape[1] != env.state_dim:
        raise InvalidInputError("agent/environment state dimensions disagree")
    rng = np.random.default_rng([eval_seed, n_episodes, 1])
    totals = np.zeros(n_episodes)
    for _ in range(env.horizon):
        actions = np.asarray(agent.act(states, rng), dtype=float)
        if actions.shape != (n_episodes, env.action_dim):
            raise InvalidInputError(
                f"agent produced actions of shape {actions.shape}, "
                f"expected {(n_episodes, env.action_dim)}")
        states, rewards = env.transition(states, env.clip_action(actions))
        totals += rewards
    return normalized_return(env, totals)


@dataclass
class CheckpointEval:
    step: int
    returns: list[float]
    mean: float
    variance: float


@dataclass
class EvalReport:
    env_name: str
    episodes: int
    eval_seed: int
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    records: list[CheckpointEval] = field(default_factory=list)

    def steps(self) -> list[int]:
        return [r.step for r in self.records]

    def means(self) -> np.ndarray:
        return np.array([r.mean for r in self.records])

    def variances(self) -> np.ndarray:
        return np.array([r.variance for r in self.records])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        data = json.loads(text)
        records = [CheckpointEval(**r) for r in data.pop("records")]
        return EvalReport(records=records, **data)

    @staticmethod
    def load(path) -> "EvalReport":
        return EvalReport.from_json(Path(path).read_text())


def _record(step: int, returns: np.ndarray) -> CheckpointEval:
    returns = np.asarray(returns, dtype=float)
    var = float(np.var(returns, ddof=1)) if len(returns) > 1 else 0.0
    return CheckpointEval(step=int(step), returns=returns.tolist(),
                          mean=float(np.mean(returns)), variance=var)


def evaluate_manifest(manifest_path, n_episodes: int | None = None, eval_seed: int = 0,
                      inference: str | None = None, lam: float | None = None,
                      alpha: float | None = None) -> EvalReport:
    """Evaluate every checkpoint pair listed in a run manifest.

    ``inference`` overrides the manifest's evaluation mode: "same" attaches
    each checkpoint's own training guidance, "different" the run's separate
    inference-guidance module, "none" evaluates the bare policy.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    run_dir = manifest_path.parent
    mode = inference if inference is not None else manifest.get("eval_inference", "same")
    if mode not in ("same", "different", "none"):
        raise InvalidInputError(f"unknown inference mode {mode!r}")
    lam = manifest.get("lambda", 0.1) if lam is None else lam
    alpha = manifest.get("alpha", 0.0) if alpha is None else alpha
    episodes = manifest["config"]["eval_episodes"] if n_episodes is None else n_episodes
    env = make_env(manifest["env"])

    different_guidance = None
    if mode == "different":
        name = manifest.get("inference_guidance")
        if name is None:
            raise InvalidInputError("manifest has no separate inference-guidance checkpoint")
        different_guidance = load_checkpoint(run_dir / name)

    report = EvalReport(
        env_name=manifest["env"], episodes=episodes, eval_seed=eval_seed,
        config_hash=manifest.get("config_hash", ""),
        seeds={k: manifest["config"][k] for k in
               ("guidance_seed", "policy_seed", "inference_guidance_seed")})
    for entry in manifest["checkpoints"]:
        policy = load_checkpoint(run_dir / entry["policy"])
        if mode == "none":
            guidance = None
        elif mode == "different":
            guidance = different_guidance
        else:
            guidance = load_checkpoint(run_dir / entry["guidance"])
        agent = PolicyAgent(policy, guidance, lam=lam if guidance is not None else 0.0, alpha=alpha)
        returns = evaluate_checkpoint(agent, env, episodes, eval_seed)
        report.records.append(_record(entry["step"], returns))
    return report


def evaluate_hybrid(agent: HybridAgent, env_name: str, n_episodes: int = 50,
                    eval_seed: int = 0) -> EvalReport:
    """Single-point report for a composed agent (step index 0)."""
    env = make_env(env_name)
    returns = evaluate_checkpoint(agent, env, n_episodes, eval_seed)
    report = EvalReport(env_name=env_name, episodes=n_episodes, eval_seed=eval_seed)
    report.records.append(_record(0, returns))
    return report
