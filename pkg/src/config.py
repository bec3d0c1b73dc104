"""Configuration management for the late-interaction retrieval workbench."""

import os
import logging
import yaml
from typing import Dict, Any, Optional
from dataclasses import dataclass, fields, asdict

logger = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    """Toy encoder settings."""
    dim: int = 64
    seed: int = 0
    max_tokens: int = 512

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"Encoder dim must be >= 2, got {self.dim}")
        if self.max_tokens < 1:
            raise ValueError(f"Encoder max_tokens must be >= 1, got {self.max_tokens}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"Encoder seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass
class ContrastiveConfig:
    """Contrastive objective and hard-negative mining settings."""
    tau: float = 0.02
    k_negatives: int = 2
    percentage_threshold: float = 0.95

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"Temperature tau must be > 0, got {self.tau}")
        if self.k_negatives < 0:
            raise ValueError(f"k_negatives must be >= 0, got {self.k_negatives}")
        if not 0 < self.percentage_threshold <= 1:
            raise ValueError(
                f"percentage_threshold must be in (0, 1], got {self.percentage_threshold}"
            )


@dataclass
class TrainingSettings:
    """Two-stage demo settings."""
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 10
    pairs_per_stage: int = 100
    out_dim: int = 32


@dataclass
class IndexSettings:
    """Index construction and search settings."""
    mode: str = "multi_vector"
    precision: str = "fp32"
    kind: str = "dot"
    workers: int = 1


@dataclass
class EvalSettings:
    """Evaluation harness settings."""
    k: int = 5
    gain: str = "exponential"


@dataclass
class LoggingConfig:
    """Logging settings."""
    log_level: str = "INFO"
    log_format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"


_ENV_OVERRIDES = {
    "ENCODER_DIM": ("encoder", "dim", int),
    "ENCODER_SEED": ("encoder", "seed", int),
    "ENCODER_MAX_TOKENS": ("encoder", "max_tokens", int),
    "TRAIN_TAU": ("contrastive", "tau", float),
    "TRAIN_EPOCHS": ("training", "epochs", int),
    "TRAIN_LEARNING_RATE": ("training", "learning_rate", float),
    "INDEX_PRECISION": ("index", "precision", str),
    "EVAL_K": ("eval", "k", int),
    "LOG_LEVEL": ("logging", "log_level", str),
}

_SECTIONS = ("encoder", "contrastive", "training", "index", "eval", "logging")


def _check_field_types(obj: Any) -> None:
    """Reject values whose type does not match the dataclass annotation."""
    for f in fields(obj):
        value = getattr(obj, f.name)
        expected = (int, float) if f.type is float else f.type
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ValueError(
                f"Invalid type for {type(obj).__name__}.{f.name}: "
                f"expected {f.type.__name__}, got {value!r}"
            )


class Config:
    """Main configuration class for the workbench."""

    def __init__(self, config_file: Optional[str] = None, load_env: bool = True):
        """Initialize configuration from file and, optionally, environment variables."""
        self.encoder = EncoderConfig()
        self.contrastive = ContrastiveConfig()
        self.training = TrainingSettings()
        self.index = IndexSettings()
        self.eval = EvalSettings()
        self.logging = LoggingConfig()

        if config_file:
            self.load_from_file(config_file)

        if load_env:
            self.load_from_env()

    def load_from_file(self, config_file: str) -> None:
        """Load configuration from YAML file."""
        try:
            with open(config_file, 'r') as f:
                config_data = yaml.safe_load(f) or {}
            if not isinstance(config_data, dict):
                raise ValueError(f"Configuration file {config_file} must contain a mapping")

            for section in _SECTIONS:
                if section in config_data:
                    self._update_dataclass(getattr(self, section), config_data[section])

        except FileNotFoundError:
            logger.warning(f"Configuration file {config_file} not found, using defaults")
        except yaml.YAMLError as e:
            logger.warning(f"Error parsing configuration file: {e}")

    def load_from_env(self) -> None:
        """Load configuration from environment variables."""
        for variable, (section, name, cast) in _ENV_OVERRIDES.items():
            raw = os.getenv(variable)
            if raw is None:
                continue
            try:
                setattr(getattr(self, section), name, cast(raw))
            except ValueError:
                raise ValueError(f"Invalid value for {variable}: {raw!r}")

    def _update_dataclass(self, obj: Any, data: Dict[str, Any]) -> None:
        """Update dataclass fields from dictionary."""
        if data is not None and not isinstance(data, dict):
            raise ValueError(f"Configuration section for {type(obj).__name__} must be a mapping, got {data!r}")
        for key, value in (data or {}).items():
            if hasattr(obj, key):
                setattr(obj, key, value)
            else:
                logger.warning(f"Ignoring unknown configuration key {key!r}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return {section: asdict(getattr(self, section)) for section in _SECTIONS}

    def validate(self) -> bool:
        """Validate configuration settings."""
        for section in _SECTIONS:
            _check_field_types(getattr(self, section))
        # file and env loading bypass __post_init__
        EncoderConfig(**asdict(self.encoder))
        ContrastiveConfig(**asdict(self.contrastive))
        if self.training.epochs < 0:
            raise ValueError(f"Invalid training epochs: {self.training.epochs}")
        if self.training.learning_rate < 0:
            raise ValueError(f"Invalid learning rate: {self.training.learning_rate}")
        if self.training.batch_size < 1:
            raise ValueError(f"Invalid batch size: {self.training.batch_size}")
        if self.training.out_dim < 1:
            raise ValueError(f"Invalid head output dimension: {self.training.out_dim}")
        if self.index.mode not in ("multi_vector", "pooled", "binary"):
            raise ValueError(f"Invalid index mode: {self.index.mode}")
        if self.index.precision not in ("fp32", "fp16", "int8", "bit1"):
            raise ValueError(f"Invalid index precision: {self.index.precision}")
        if self.index.kind not in ("dot", "cosine"):
            raise ValueError(f"Invalid similarity kind: {self.index.kind}")
        if self.index.workers < 1:
            raise ValueError(f"Invalid worker count: {self.index.workers}")
        if self.eval.k < 1:
            raise ValueError(f"Invalid evaluation cutoff k: {self.eval.k}")
        if self.eval.gain not in ("exponential", "linear"):
            raise ValueError(f"Invalid gain function: {self.eval.gain}")
        if logging.getLevelName(str(self.logging.log_level).upper()) not in (
            logging.DEBUG, logging.INFO, logging.WARNING, logging.ERROR, logging.CRITICAL
        ):
            raise ValueError(f"Invalid log level: {self.logging.log_level}")
        return True
