"""
Configuration module for AssignSurrogate.

Two layers live here. ``Config`` reads runtime settings (worker count, default
experiment directory, debug flag) from the environment or a .env file.
``ExperimentConfig`` holds the typed sections that drive every pipeline stage
and is loaded from JSON or key=value files with dotted keys.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ValidationError
from .simulator import SimConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)


class Config:
    """Runtime settings from the environment."""

    def __init__(self, env_file: Optional[str] = None):
        """Initialize configuration from environment or .env file.

        Args:
            env_file (str, optional): Path to the .env file. If None, tries to find
                                     .env in the current directory or parent directories.
        """
        self._load_environment(env_file)
        self._initialize_config()

    def _load_environment(self, env_file: Optional[str]) -> None:
        if env_file and Path(env_file).exists():
            load_dotenv(env_file)
            logger.info("Loaded environment from %s", env_file)
            return
        for path in [".env", "../.env", "../../.env"]:
            if Path(path).exists():
                load_dotenv(path)
                logger.info("Loaded environment from %s", path)
                break

    def _initialize_config(self) -> None:
        workers = os.environ.get("ASSIGN_SURROGATE_WORKERS", "1")
        try:
            self.workers = max(1, int(workers))
        except ValueError:
            raise ValidationError(f"ASSIGN_SURROGATE_WORKERS must be an integer, got {workers!r}") from None
        self.default_output_dir = os.environ.get("ASSIGN_SURROGATE_OUTPUT_DIR", "./experiments")
        self.debug = os.environ.get("ASSIGN_SURROGATE_DEBUG", "false").lower() == "true"

    def as_dict(self) -> Dict[str, Any]:
        return {
            "workers": self.workers,
            "default_output_dir": self.default_output_dir,
            "debug": self.debug,
        }

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value by key."""
        return self.as_dict().get(key, default)


def get_config(env_file: Optional[str] = None) -> Config:
    """Get a configuration instance.

    Args:
        env_file (str, optional): Path to the .env file.

    Returns:
        Config: A configuration instance.
    """
    return Config(env_file)


# ---------------------------------------------------------------------------
# Experiment sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkSettings:
    rows: int = 5
    cols: int = 5
    edge_length: float = 100.0
    speed: float = 10.0
    capacity: float = 0.2
    hex_size: float = 80.0


@dataclass(frozen=True)
class DemandSettings:
    agents: int = 200
    window: float = 300.0
    max_retries: int = 100


@dataclass(frozen=True)
class PathSettings:
    k: int = 4


@dataclass(frozen=True)
class SamplerSettings:
    resolution: int = 4
    samples: int = 150
    random_samples: int = 0


@dataclass(frozen=True)
class DatasetSettings:
    flow_window: int = 12
    assign_window: int = 12
    marking: str = "departure"
    train: float = 0.70
    val: float = 0.10
    test: float = 0.20


@dataclass(frozen=True)
class ModelSettings:
    hidden: int = 64
    residual_channels: int = 32
    dilations: Tuple[int, ...] = (1, 2)
    fusion: str = "attention"
    recurrent: str = "lstm"
    activation: str = "tanh"


@dataclass(frozen=True)
class EvalSettings:
    trace_cell: int = 0
    bench_assignments: int = 10


SECTIONS = {
    "network": NetworkSettings,
    "demand": DemandSettings,
    "paths": PathSettings,
    "sampler": SamplerSettings,
    "sim": SimConfig,
    "dataset": DatasetSettings,
    "model": ModelSettings,
    "train": TrainConfig,
    "eval": EvalSettings,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    network: NetworkSettings = field(default_factory=NetworkSettings)
    demand: DemandSettings = field(default_factory=DemandSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    sim: SimConfig = field(default_factory=SimConfig)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"seed": self.seed}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            data[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        return cls().update(flatten(data))

    def update(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """New config with dotted-key overrides (``sim.horizon``) applied and coerced."""
        seed = self.seed
        changes: Dict[str, Dict[str, Any]] = {}
        for key, value in overrides.items():
            if key == "seed":
                seed = _coerce(value, self.seed, key)
                continue
            section, _, name = key.partition(".")
            if section not in SECTIONS:
                raise ValidationError(f"unknown config section in key {key!r}")
            current = getattr(self, section)
            if name not in {f.name for f in fields(current)}:
                raise ValidationError(f"unknown config key {key!r}")
            changes.setdefault(section, {})[name] = _coerce(value, getattr(current, name), key)
        sections = {name: replace(getattr(self, name), **changes[name]) for name in changes}
        return replace(self, seed=seed, **sections)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def section_digest(self, *names: str) -> str:
        """SHA-256 over the seed and the named sections."""
        data = self.to_dict()
        payload = {"seed": self.seed, **{name: data[name] for name in names}}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def flatten(data: Mapping[str, Any]) -> Dict[str, Any]:
    """Turn ``{"sim": {"horizon": 1500}}`` into ``{"sim.horizon": 1500}``."""
    flat = {}
    for key, value in data.items():
        if isinstance(value, Mapping):
            for inner, inner_value in value.items():
                flat[f"{key}.{inner}"] = inner_value
        else:
            flat[key] = value
    return flat


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(value: Any, current: Any, key: str) -> Any:
    try:
        if isinstance(current, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(current, int):
            number = float(value)
            if number != int(number):
                raise ValueError(f"not an integer: {value!r}")
            return int(number)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            items = value.split(",") if isinstance(value, str) else value
            return tuple(int(str(v).strip()) for v in items if str(v).strip())
        return str(value).strip()
    except (TypeError, ValueError) as e:
        raise ValidationError(f"config key {key!r}: {e}") from None


def load_config_file(path) -> Dict[str, Any]:
    """Read a JSON (``.json``) or key=value config file into dotted-key overrides."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise ValidationError(f"{path}: {e}") from None
        if not isinstance(data, Mapping):
            raise ValidationError(f"{path}: expected a JSON object")
        return flatten(data)
    values = dotenv_values(path)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ValidationError(f"{path}: keys without values: {', '.join(missing)}")
    return dict(values)


def load_experiment_config(directory=None, config_file=None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Defaults, then the experiment snapshot, then a config file, then explicit overrides."""
    cfg = ExperimentConfig()
    if directory is not None:
        snapshot = Path(directory) / "config.json"
        if snapshot.exists():
            cfg = cfg.update(load_config_file(snapshot))
    if config_file is not None:
        cfg = cfg.update(load_config_file(config_file))
    if overrides:
        cfg = cfg.update(overrides)
    return cfg
