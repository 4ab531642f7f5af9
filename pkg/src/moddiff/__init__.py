"""moddiff: modular diffusion policies for offline RL.

Guidance (value estimation) and diffusion (denoising) modules are built,
trained, checkpointed, and recombined independently. See the README for the
training regimens and the CLI.
"""

__version__ = "0.1.0"

from .envs import OfflineDataset, generate_dataset, load_dataset, make_env, save_dataset
from .guidance import DoubleQ, GuidanceConfig, IqlGuidance, pretrain_guidance
from .pipelines import HybridAgent, TrainConfig, compose_modules, run_training
from .policy import DiffusionPolicy, make_policy
from .schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "__version__",
    "DiffusionPolicy",
    "DoubleQ",
    "GuidanceConfig",
    "HybridAgent",
    "IqlGuidance",
    "NoiseSchedule",
    "OfflineDataset",
    "TrainConfig",
    "compose_modules",
    "generate_dataset",
    "load_dataset",
    "make_env",
    "make_linear_schedule",
    "make_policy",
    "pretrain_guidance",
    "run_training",
    "save_dataset",
]
