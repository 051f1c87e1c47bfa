"""Scene configs, metrics, file formats and the experiment commands."""
from .config import ConfigError, SceneConfig, load_config, parse_config, serialize_config
from .experiment import COMMANDS, Experiment, run_experiment
from .metrics import MetricsRow, psnr, ssim
from .presets import PRESETS, preset_config

__all__ = [
    "COMMANDS",
    "ConfigError",
    "Experiment",
    "MetricsRow",
    "PRESETS",
    "SceneConfig",
    "load_config",
    "parse_config",
    "preset_config",
    "psnr",
    "run_experiment",
    "serialize_config",
    "ssim",
]
