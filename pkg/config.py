import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

CLASS_NAMES = ('Smooth', 'Rough', 'Bumpy', 'Forbidden', 'Obstacle', 'Background')
NUM_CLASSES = len(CLASS_NAMES)
IGNORE_INDEX = 255

# Mean colour per terrain group (RGB, 8-bit); also used for label previews
CLASS_COLORS = (
    (150, 150, 150),    # Smooth: grey pavement
    (140, 120, 70),     # Rough: dirt and grass
    (110, 90, 80),      # Bumpy: rock
    (40, 90, 130),      # Forbidden: water and dense vegetation
    (60, 45, 30),       # Obstacle: trunks, poles
    (170, 200, 230),    # Background: sky
)
IGNORE_COLOR = (0, 0, 0)

ENVIRONMENTS = ('production', 'debug', 'testing')


class ConfigError(ValueError):
    """Raised for unknown configuration keys, bad values or violated constraints."""
    pass


class Config:
    """
    Base runtime configuration for the CSTR toolkit.

    The CSTR_ENV environment variable determines which configuration is used:
    - 'production': Default configuration (this class)
    - 'debug': Verbose logging
    - 'testing': Temporary output directory and double precision

    Environment variable CSTR_ENV must be one of: production, debug, testing
    """
    ENV = os.getenv('CSTR_ENV', 'production')
    OUTPUT_DIR = os.getenv('CSTR_OUTPUT_DIR', './runs')
    LOG_LEVEL = os.getenv('CSTR_LOG_LEVEL')

    # 0 keeps data loading on the training thread (bit-exact reproduction mode)
    NUM_WORKERS = int(os.getenv('CSTR_NUM_WORKERS', '0'))
    DTYPE = os.getenv('CSTR_DTYPE', 'float32')
    DEBUG = False
    TESTING = False
    SHOW_PROGRESS = True

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        return {key: getattr(cls, key) for key in dir(cls) if key.isupper()}


class DebugConfig(Config):
    """
    Debug configuration for development.

    Enabled when CSTR_ENV=debug: DEBUG level logging with module names.
    """
    DEBUG = True


class TestConfig(Config):
    """
    Testing configuration for automated tests.

    Enabled when CSTR_ENV=testing. Outputs go to a temporary directory and
    tensors use double precision so gradient oracles have headroom.
    """
    TESTING = True
    OUTPUT_DIR = tempfile.mkdtemp(prefix='cstr_test_runs_')
    DTYPE = os.getenv('CSTR_DTYPE', 'float64')
    SHOW_PROGRESS = False


# --------------------------------------------------------------------------- experiment config
@dataclass
class LossConfig:
    lambda_band: float = 0.4
    lambda_point: float = 1.0
    band_width: int = 2


@dataclass
class ModelConfig:
    """
    Decoder shape and the ablation variant.

    ``variant`` names a row of the incremental chain (see ``network.cstr.VARIANTS``);
    ``gate`` and ``point_refine`` only apply to variants that include them.
    """
    variant: str = '+GCS-point'
    widths: Tuple[int, ...] = (16, 32, 64, 128)
    embed_dim: int = 32
    bottleneck: str = 'softmax'
    gate: str = '3-way CA+TB+T0'
    point_refine: bool = True
    point_budget: float = 0.01
    point_hidden: int = 64
    edge_channels: int = 16
    grid_channels: int = 16
    pool_size: int = 2


@dataclass
class OptimConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 4e-5
    poly_power: float = 0.9
    warmup_iters: int = 100
    max_iters: int = 2000
    clip_norm: float = 35.0


@dataclass
class LoopConfig:
    batch_size: int = 4
    seed: int = 0
    log_interval: int = 50
    eval_interval: int = 500
    augment: bool = True


@dataclass
class DataConfig:
    train_count: int = 200
    eval_count: int = 50
    height: int = 64
    width: int = 64
    overlap: float = 0.3
    flip_prob: float = 0.5


@dataclass
class EvalConfig:
    band_width: int = 2
    tolerance: int = 1


@dataclass
class TrainConfig:
    """
    Full experiment configuration addressed by dotted keys (``loss.lambda_band``).

    Values resolve as defaults < ``--config`` file < command-line flags.
    """
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: LoopConfig = field(default_factory=LoopConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_file(cls, path: str, overrides: Optional[Mapping[str, Any]] = None) -> 'TrainConfig':
        """
        Load a ``key=value`` file (``#`` comments allowed) on top of the defaults.

        Raises:
            ConfigError: If the file is missing or holds unknown keys or bad values.
        """
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        cfg = cls()
        cfg.update({k: v for k, v in dotenv_values(path).items() if v is not None})
        if overrides:
            cfg.update(overrides)
        return cfg

    def update(self, values: Mapping[str, Any]) -> 'TrainConfig':
        """Apply dotted-key overrides in place; strings are coerced to the field type."""
        for key, raw in values.items():
            group_name, _, name = key.partition('.')
            group = getattr(self, group_name, None) if name else None
            if group is None or not dataclasses.is_dataclass(group) or name not in _field_names(group):
                raise ConfigError(f"unknown config key: {key!r}")
            current = getattr(group, name)
            setattr(group, name, _coerce(key, raw, current))
        return self

    def copy(self, **overrides) -> 'TrainConfig':
        """Deep copy, optionally with dotted overrides passed as ``group__name=value``."""
        clone = TrainConfig.from_dict(self.to_dict())
        clone.update({k.replace('__', '.'): v for k, v in overrides.items()})
        return clone

    def to_dict(self) -> Dict[str, Any]:
        """Flat ``{dotted_key: value}`` mapping in declaration order."""
        flat = {}
        for group in dataclasses.fields(self):
            for item in dataclasses.fields(getattr(self, group.name)):
                flat[f"{group.name}.{item.name}"] = getattr(getattr(self, group.name), item.name)
        return flat

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> 'TrainConfig':
        return cls().update(values)

    def validate(self) -> 'TrainConfig':
        """
        Raises:
            ConfigError: If the schedule or any rate is inconsistent.
        """
        o = self.optim
        if o.max_iters < 0 or o.warmup_iters < 0:
            raise ConfigError("iteration counts must be non-negative")
        if o.max_iters == 0:
            if o.warmup_iters != 0:
                raise ConfigError("optim.warmup_iters must be 0 when optim.max_iters is 0")
        elif o.warmup_iters >= o.max_iters:
            raise ConfigError(
                f"optim.warmup_iters ({o.warmup_iters}) must be below optim.max_iters ({o.max_iters})")
        for key in ('base_lr', 'poly_power', 'clip_norm'):
            if getattr(o, key) <= 0:
                raise ConfigError(f"optim.{key} must be positive")
        if not 0 <= o.momentum < 1:
            raise ConfigError("optim.momentum must lie in [0, 1)")
        if o.weight_decay < 0:
            raise ConfigError("optim.weight_decay must be non-negative")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be at least 1")
        if self.data.height % 16 or self.data.width % 16 or min(self.data.height, self.data.width) < 32:
            raise ConfigError("data.height and data.width must be multiples of 16 and at least 32")
        if not 0.0 <= self.data.overlap <= 1.0:
            raise ConfigError("data.overlap must lie in [0, 1]")
        if not 0.0 <= self.data.flip_prob <= 1.0:
            raise ConfigError("data.flip_prob must lie in [0, 1]")
        if not 0.0 <= self.model.point_budget <= 1.0:
            raise ConfigError("model.point_budget must lie in [0, 1]")
        if self.loss.lambda_band < 0 or self.loss.lambda_point < 0 or self.loss.band_width < 0:
            raise ConfigError("loss weights and band width must be non-negative")
        if self.eval.band_width < 1 or self.eval.tolerance < 0:
            raise ConfigError("eval.band_width must be >= 1 and eval.tolerance >= 0")
        return self

    def scene(self, seed: Optional[int] = None) -> 'SceneConfig':
        return SceneConfig(height=self.data.height, width=self.data.width, overlap=self.data.overlap,
                           seed=self.train.seed if seed is None else seed)


def _field_names(group) -> Tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(group))


def _coerce(key: str, raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw)
        return type(current)(raw) if current is not None else raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r} (expected {type(current).__name__})")
    return text


# --------------------------------------------------------------------------- scenes
@dataclass(frozen=True)
class SceneConfig:
    """
    Procedural scene parameters.

    Attributes:
        height, width: Image size, multiples of 16.
        overlap: 0 keeps class colours apart, 1 makes every class share one colour
                 distribution.
        noise_amplitude: Shared texture noise amplitude in 8-bit units.
        obstacle_strokes: Inclusive ``(min, max)`` count of thin vertical strokes.
        forbidden_blobs: Inclusive ``(min, max)`` count of elliptical blobs.
        seed: Dataset seed; scene ``i`` draws from ``default_rng([seed, i])``.
    """
    height: int = 64
    width: int = 64
    overlap: float = 0.3
    noise_amplitude: float = 24.0
    obstacle_strokes: Tuple[int, int] = (1, 3)
    forbidden_blobs: Tuple[int, int] = (0, 2)
    seed: int = 0

    def digest(self) -> str:
        """Short hex digest of every field; stored in dataset headers."""
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()[:16]
