from .config import ConfigError, apply_overrides, load_config, metric_from_config
from .experiments import EXPERIMENTS, RunManifest, run_experiment

__all__ = [
    "ConfigError",
    "apply_overrides",
    "load_config",
    "metric_from_config",
    "EXPERIMENTS",
    "RunManifest",
    "run_experiment",
]
