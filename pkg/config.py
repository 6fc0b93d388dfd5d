# config.py

"""
Run configuration: one frozen dataclass, loaded from flat key=value files.
"""

import io
import logging
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

from dotenv import dotenv_values

from editor_model import EditorArchitecture
from errors import ConfigError
from objectives import LossWeights
from optimizer import AdaBeliefHyper
from synthetic_world import WorldConfig

logger = logging.getLogger(__name__)

# =============================================================================
# Defaults
# =============================================================================

DEFAULT_ATTRIBUTES = ("gender", "glasses", "age", "smile")
DEFAULT_SEED = 7

# Generator geometry of the full-size model the desk runs stand in for
FULL_SIZE_DIMS = {"num_layers": 18, "latent_dim": 512, "num_attributes": 4, "image_dim": 1024, "identity_dim": 128}


class DirectionNorm(Enum):
    L2 = "l2"
    L1 = "l1"


class TargetMode(Enum):
    """How per-attribute training targets are chosen"""
    TOGGLE = "toggle"
    RANDOM = "random"


class DatasetMode(Enum):
    """Fresh W+ samples every step, or a fixed pre-mixed pool"""
    STREAM = "stream"
    POOL = "pool"


# =============================================================================
# Value parsing
# =============================================================================

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_names(raw: str) -> Tuple[str, ...]:
    return tuple(name.strip() for name in raw.split(",") if name.strip())


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# =============================================================================
# Run configuration
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run; see configs/desk.conf for the documented keys"""

    # geometry
    num_layers: int = 6
    latent_dim: int = 32
    num_attributes: int = 4
    attributes: Tuple[str, ...] = DEFAULT_ATTRIBUTES

    # synthetic world
    image_dim: int = 64
    identity_dim: int = 28
    planted_sparsity: str = "auto"
    layer_weights: str = "decay"
    classifier_bias_scale: float = 0.0
    generator_gain: float = 32.0

    # objective weights
    lambda_class: float = 2.0
    lambda_nb: float = 0.3
    lambda_sparsity: float = 0.1
    lambda_direction: float = 1.0
    lambda_id: float = 5.0

    # optimizer
    learning_rate: float = 1e-3
    beta1: float = 0.98
    beta2: float = 0.98
    eps: float = 1e-8
    clip_grad_norm: float = 0.0

    # schedule
    batch_size: int = 8
    iterations: int = 5000
    seed: int = DEFAULT_SEED
    log_every: int = 100

    # variants
    direction_norm: str = DirectionNorm.L2.value
    target_mode: str = TargetMode.TOGGLE.value
    dataset_mode: str = DatasetMode.STREAM.value
    pool_size: int = 1000
    pool_permutations: int = 8

    # ablation toggles
    disable_direction_loss: bool = False
    disable_sparsity_loss: bool = False
    disable_cfc: bool = False
    disable_input_pe: bool = False
    disable_output_embedding: bool = False

    def __post_init__(self):
        problems = []
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                problems.append(f"{name} must lie in [0, 1) (got {value})")
        if self.eps <= 0:
            problems.append(f"eps must be > 0 (got {self.eps})")
        if self.clip_grad_norm < 0:
            problems.append("clip_grad_norm must be >= 0")
        if not self.generator_gain > 0:
            problems.append(f"generator_gain must be > 0 (got {self.generator_gain})")
        for name in ("batch_size", "iterations", "log_every", "pool_size", "pool_permutations",
                     "num_layers", "num_attributes", "image_dim", "identity_dim"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.latent_dim < 2 or self.latent_dim % 2:
            problems.append(f"latent_dim must be a positive even number (got {self.latent_dim})")
        if self.num_attributes > self.latent_dim:
            problems.append("num_attributes cannot exceed latent_dim")
        if len(self.attributes) != self.num_attributes:
            problems.append(f"attributes lists {len(self.attributes)} names for {self.num_attributes} attributes")
        if len(set(self.attributes)) != len(self.attributes):
            problems.append("attribute names must be unique")
        for name in ("lambda_class", "lambda_nb", "lambda_sparsity", "lambda_direction", "lambda_id"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        if self.seed < 0:
            problems.append("seed must be >= 0")
        for name, enum in (("direction_norm", DirectionNorm), ("target_mode", TargetMode),
                           ("dataset_mode", DatasetMode)):
            allowed = [member.value for member in enum]
            if getattr(self, name) not in allowed:
                problems.append(f"{name} must be one of {allowed} (got {getattr(self, name)!r})")
        try:
            nonzeros = self.planted_nonzeros
            if nonzeros is not None and not 1 <= nonzeros <= self.latent_dim:
                problems.append(f"planted_sparsity must lie in [1, {self.latent_dim}] (got {nonzeros})")
        except ValueError as e:
            problems.append(str(e))
        try:
            weights = self.layer_weight_values
            if weights is not None and (len(weights) != self.num_layers or min(weights) <= 0):
                problems.append(f"layer_weights needs {self.num_layers} positive values")
        except ValueError as e:
            problems.append(str(e))
        if problems:
            raise ConfigError("; ".join(problems))

    # ------------------------------------------------------------------ views

    @property
    def planted_nonzeros(self) -> Optional[int]:
        """Nonzeros per planted direction; None means dense."""
        raw = str(self.planted_sparsity).strip().lower()
        if raw == "dense":
            return None
        if raw == "auto":
            return max(1, self.latent_dim // 5)
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"planted_sparsity must be an integer, 'auto' or 'dense' (got {raw!r})")

    @property
    def layer_weight_values(self) -> Optional[Tuple[float, ...]]:
        raw = str(self.layer_weights).strip().lower()
        if raw == "decay":
            return None
        try:
            return tuple(float(v) for v in raw.split(","))
        except ValueError:
            raise ValueError(f"layer_weights must be 'decay' or a comma list of numbers (got {raw!r})")

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            num_layers=self.num_layers,
            latent_dim=self.latent_dim,
            num_attributes=self.num_attributes,
            image_dim=self.image_dim,
            identity_dim=self.identity_dim,
            layer_weights=self.layer_weight_values,
            planted_sparsity=self.planted_nonzeros,
            classifier_bias_scale=self.classifier_bias_scale,
            generator_gain=self.generator_gain,
            seed=self.seed,
        )

    def architecture(self) -> EditorArchitecture:
        return EditorArchitecture(
            num_layers=self.num_layers,
            latent_dim=self.latent_dim,
            num_attributes=self.num_attributes,
            direction_norm=self.direction_norm,
            use_cfc=not self.disable_cfc,
            use_input_pe=not self.disable_input_pe,
            use_output_embedding=not self.disable_output_embedding,
        )

    def loss_weights(self) -> LossWeights:
        """Loss weights with the disabled terms zeroed"""
        return LossWeights(
            lambda_class=self.lambda_class,
            lambda_nb=self.lambda_nb,
            lambda_sparsity=0.0 if self.disable_sparsity_loss else self.lambda_sparsity,
            lambda_direction=0.0 if self.disable_direction_loss else self.lambda_direction,
            lambda_id=self.lambda_id,
        )

    def hyper(self) -> AdaBeliefHyper:
        return AdaBeliefHyper(learning_rate=self.learning_rate, beta1=self.beta1,
                              beta2=self.beta2, eps=self.eps)

    def attribute_index(self, name: str) -> int:
        try:
            return self.attributes.index(name)
        except ValueError:
            raise ConfigError(f"unknown attribute {name!r}; known: {', '.join(self.attributes)}")

    def with_overrides(self, **overrides) -> "TrainConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **overrides)

    # ----------------------------------------------------------- text format

    def to_text(self) -> str:
        """Canonical key=value rendering (field order), parseable by from_text."""
        return "".join(f"{f.name}={_render(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: Dict[str, Optional[str]], source: str = "<config>") -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")

        parsed = {}
        for key, raw in values.items():
            if raw is None:
                raise ConfigError(f"{source}: key {key!r} has no value")
            parser = _PARSERS[key]
            try:
                parsed[key] = parser(raw)
            except ValueError as e:
                raise ConfigError(f"{source}: bad value for {key!r}: {e}")
        return cls(**parsed)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        return cls.from_mapping(dict(dotenv_values(stream=io.StringIO(text), interpolate=False)), source)


def _parser_for(default) -> Callable[[str], object]:
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return lambda raw: int(raw.strip())
    if isinstance(default, float):
        return lambda raw: float(raw.strip())
    if isinstance(default, tuple):
        return _parse_names
    return lambda raw: raw.strip()


_PARSERS = {f.name: _parser_for(f.default) for f in fields(TrainConfig)}


def load_config(path: Union[str, Path]) -> TrainConfig:
    """Load a key=value run config; unknown keys and bad values raise ConfigError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "config file not found", str(path))
    values = dotenv_values(path, interpolate=False)
    config = TrainConfig.from_mapping(dict(values), source=str(path))
    logger.info(f"Loaded config {path} (L={config.num_layers}, d={config.latent_dim}, "
                f"M={config.num_attributes}, iterations={config.iterations}, seed={config.seed})")
    return config


def full_size_config(config: Optional[TrainConfig] = None) -> TrainConfig:
    """The given (or default) config scaled up to the full-size generator geometry."""
    base = TrainConfig() if config is None else config
    return base.with_overrides(attributes=DEFAULT_ATTRIBUTES, planted_sparsity="auto", layer_weights="decay",
                               **FULL_SIZE_DIMS)


# =============================================================================
# Debug Information
# =============================================================================

if __name__ == "__main__":
    print(TrainConfig().to_text(), end="")
