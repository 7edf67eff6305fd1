import json
import logging
import os
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError
from .rounding import RoundingMode, parse_mode
from .softfloat import FloatFormat

# config.json in the project root; LPGD_CONFIG overrides it.
_project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG_PATH = os.path.join(_project_root, "config.json")
CONFIG_ENV = "LPGD_CONFIG"
DATA_ROOT_ENV = "LPGD_DATA_ROOT"

EXPERIMENTS = ("round-demo", "quadratic", "mlr", "nn", "eval-bounds")
SETTINGS = ("I", "II", "stagnation")

logger = logging.getLogger(__name__)


def config_path() -> str:
    return os.environ.get(CONFIG_ENV, DEFAULT_CONFIG_PATH)


def _optional(value: Any, cast: Any) -> Any:
    return None if value is None else cast(value)


class ExperimentConfig:
    """Settings for one experiment.

    Top-level keys apply to every experiment; a section named after the
    experiment (``"mlr": {...}``) overrides them.
    """

    def __init__(self, config_data: Dict[str, Any], experiment: Optional[str] = None):
        experiment = experiment or config_data.get("experiment", "quadratic")
        if experiment not in EXPERIMENTS:
            raise ConfigError(
                f"config.experiment must be one of {EXPERIMENTS}, got '{experiment}'", key="experiment"
            )
        merged = {
            key: value
            for key, value in config_data.items()
            if key not in EXPERIMENTS
        }
        section = config_data.get(experiment, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config.{experiment} must be an object", key=experiment)
        merged.update(section)
        merged["experiment"] = experiment
        self._data = merged

        self.experiment: str = experiment
        self.preset: Optional[str] = merged.get("preset")
        self.format: FloatFormat = FloatFormat.from_spec(merged.get("format", "binary8"))
        # Default epsilon for bare "sr_eps"/"ssr_eps" modes
        self.eps: Optional[float] = _optional(merged.get("eps"), float)
        self.mode_grad: RoundingMode = parse_mode(merged.get("mode_grad", "rn"), self.eps)
        self.mode_mul: RoundingMode = parse_mode(merged.get("mode_mul", "rn"), self.eps)
        self.mode_sub: RoundingMode = parse_mode(merged.get("mode_sub", "rn"), self.eps)
        # None falls back to the problem's recommended stepsize
        self.t: Optional[float] = _optional(merged.get("t"), float)
        self.iters: int = int(merged.get("iters", 100))
        self.reps: int = int(merged.get("reps", 20))
        self.seed: int = int(merged.get("seed", 0))
        self.scale: float = float(merged.get("scale", 1.0))
        self.dimension: Optional[int] = _optional(merged.get("dimension"), int)
        self.setting: str = str(merged.get("setting", "I"))
        self.accumulate: Optional[str] = merged.get("accumulate")
        self.data_root: Optional[str] = merged.get("data_root")
        self.train_samples: Optional[int] = _optional(merged.get("train_samples"), int)
        self.test_samples: Optional[int] = _optional(merged.get("test_samples"), int)
        self.hidden: int = int(merged.get("hidden", 100))
        self.out: str = str(merged.get("out", "results"))
        self.debug: bool = bool(merged.get("debug", False))
        self.debug_shadow: bool = bool(merged.get("debug_shadow", False))
        self.workers: int = int(merged.get("workers", 1))
        self.bounds: bool = bool(merged.get("bounds", False))
        self.bound_a: float = float(merged.get("bound_a", 0.25))
        self.stats_samples: int = int(merged.get("stats_samples", 100000))

        # Basic validation
        if self.reps < 1:
            raise ConfigError("config.reps must be >= 1", key="reps")
        if self.iters < 0:
            raise ConfigError("config.iters must be >= 0", key="iters")
        if not 0.0 < self.scale <= 1.0:
            raise ConfigError("config.scale must lie in (0, 1]", key="scale")
        if self.t is not None and not self.t > 0.0:
            raise ConfigError("config.t must be > 0", key="t")
        if self.seed < 0:
            raise ConfigError("config.seed must be >= 0", key="seed")
        if self.workers < 1:
            raise ConfigError("config.workers must be >= 1", key="workers")
        if self.setting.upper() in ("I", "II", "1", "2"):
            self.setting = {"1": "I", "2": "II"}.get(self.setting, self.setting.upper())
        if self.setting not in SETTINGS:
            raise ConfigError(f"config.setting must be one of {SETTINGS}", key="setting")
        if self.accumulate not in (None, "sequential", "chop"):
            raise ConfigError("config.accumulate must be 'sequential' or 'chop'", key="accumulate")
        if self.dimension is not None and self.dimension < 1:
            raise ConfigError("config.dimension must be >= 1", key="dimension")

    def replace(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with some keys changed; ``None`` values are ignored."""
        data = dict(self._data)
        data.update({key: value for key, value in overrides.items() if value is not None})
        return ExperimentConfig(data, data["experiment"])

    def to_dict(self) -> Dict[str, Any]:
        return dict(self._data)

    def modes(self) -> Tuple[RoundingMode, RoundingMode, RoundingMode]:
        return self.mode_grad, self.mode_mul, self.mode_sub

    def data_root_path(self) -> str:
        """Dataset directory from the config, else from LPGD_DATA_ROOT."""
        root = self.data_root or os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise ConfigError(
                f"no dataset root: set config.data_root or {DATA_ROOT_ENV}", key="data_root"
            )
        return root

    def __repr__(self) -> str:
        return f"ExperimentConfig({self._data!r})"


def load_config(path: Optional[str] = None, experiment: Optional[str] = None) -> ExperimentConfig:
    """
    Loads and parses the JSON configuration file.

    Args:
        path: The path to the config file; defaults to LPGD_CONFIG or the
            project's config.json.
        experiment: Section to apply on top of the top-level keys.

    Returns:
        An ExperimentConfig with the loaded settings.
    """
    path = path or config_path()
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.error("Configuration file not found at '%s'. Please ensure it exists.", path)
        raise
    except json.JSONDecodeError as e:
        logger.error("Could not decode JSON from '%s'. Check for syntax errors.", path)
        raise ConfigError(f"invalid JSON in '{path}': {e}", key="config") from e
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must hold a JSON object", key="config")
    return ExperimentConfig(data, experiment)
