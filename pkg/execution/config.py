"""
Configuration management for the SSDU reconstruction toolkit
Ambient settings come from environment variables; run configuration is typed and validated
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

from execution.errors import ConfigError


class Settings(BaseSettings):
    """Application settings from environment variables"""

    # Logging
    log_level: str = "INFO"
    log_file: str = "logs/ssdu.log"  # empty string disables the file sink
    log_rotation: str = "50 MB"

    # Data
    data_dir: str = "data"  # default dataset directory for the CLI

    # Runtime
    workers: int = 1  # parallel training runs inside a sweep
    default_seed: int = 0
    precision: Literal["float64", "float32"] = "float64"  # default for TrainConfig.precision

    # Tests
    run_slow: bool = False

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "SSDU_"
        case_sensitive = False


# Global settings instance
settings = Settings()


def get_log_level() -> str:
    """Get log level"""
    return settings.log_level


def get_data_dir() -> Path:
    """Get default data directory"""
    return Path(settings.data_dir)


def get_workers() -> int:
    """Get sweep parallelism, never below one"""
    return max(1, settings.workers)


# ============================================
# RUN CONFIGURATION MODELS
# ============================================

def _parse_int_pair(value: Any) -> Any:
    """Accept "4,4", "4x4" or a single int for integer-pair fields"""
    if isinstance(value, str):
        parts = value.replace("x", ",").replace("X", ",").split(",")
        parts = [p.strip() for p in parts if p.strip()]
        if len(parts) == 1:
            parts = parts * 2
        return tuple(int(p) for p in parts)
    if isinstance(value, int):
        return (value, value)
    return value


class DCConfig(BaseModel):
    """Data-consistency unit: unrolled CG iterations and quadratic penalty"""

    n_cg_iterations: int = Field(10, ge=1)
    mu: float = Field(0.05, ge=0.0)


class ResNetConfig(BaseModel):
    """Residual regularizer; desk-scale defaults, `full_scale()` for the published size"""

    n_res_blocks: int = Field(3, ge=1)
    n_channels: int = Field(16, ge=1)
    kernel_size: int = Field(3, ge=1)
    scale_c: float = Field(0.1, gt=0.0)
    io_bias: bool = True
    rb_bias: bool = False

    # real/imaginary stacked on the channel axis
    io_channels: int = 2

    @field_validator("kernel_size")
    @classmethod
    def kernel_must_be_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {v}")
        return v

    @field_validator("io_channels")
    @classmethod
    def io_channels_fixed(cls, v: int) -> int:
        if v != 2:
            raise ValueError("io_channels is fixed at 2 (real/imag)")
        return v

    @classmethod
    def full_scale(cls, **overrides) -> "ResNetConfig":
        """15 residual blocks at 64 channels"""
        return cls(**{"n_res_blocks": 15, "n_channels": 64, **overrides})


class UnrollConfig(BaseModel):
    """Unrolled network: T alternations of regularizer and DC with shared weights"""

    n_unrolls: int = Field(5, ge=1)
    dc: DCConfig = Field(default_factory=DCConfig)
    weights_shared: bool = True
    train_mu: bool = True

    @field_validator("weights_shared")
    @classmethod
    def weights_always_shared(cls, v: bool) -> bool:
        if not v:
            raise ValueError("weights_shared is fixed to true")
        return v

    @field_validator("dc")
    @classmethod
    def mu_init_positive(cls, v: DCConfig) -> DCConfig:
        # trained as log_mu
        if v.mu <= 0:
            raise ValueError(f"dc.mu initializes log_mu and must be positive, got {v.mu}")
        return v


class PartitionPolicy(BaseModel):
    """How the acquired set Omega is split into Theta (DC) and Lambda (loss)"""

    rho: float = Field(0.4, gt=0.0, lt=1.0)
    scheme: Literal["uniform", "gaussian"] = "gaussian"
    gaussian_std_fraction: float = Field(0.25, gt=0.0)
    center_keep: Tuple[int, int] = (4, 4)
    overlap_fraction: float = Field(0.0, ge=0.0, le=1.0)
    per_slice_seed_base: int = 0
    vary_across_slices: bool = True
    identical: bool = False

    @field_validator("center_keep", mode="before")
    @classmethod
    def parse_center_keep(cls, v: Any) -> Any:
        return _parse_int_pair(v)

    @field_validator("center_keep")
    @classmethod
    def center_keep_nonnegative(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 0 or v[1] < 0:
            raise ValueError(f"center_keep must be nonnegative, got {v}")
        return v

    def slice_seed(self, slice_index: int) -> int:
        """Seed used for the partition of one slice"""
        if not self.vary_across_slices:
            return self.per_slice_seed_base
        return self.per_slice_seed_base + slice_index


TrainMode = Literal["ssdu", "supervised_kspace", "supervised_image"]


class TrainConfig(BaseModel):
    """All hyperparameters of one training run"""

    learning_rate: float = Field(1e-3, gt=0.0)
    n_epochs: int = Field(100, ge=1)
    batch_size: int = 1
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    precision: Literal["float64", "float32"] = Field(default_factory=lambda: settings.precision)
    mode: TrainMode = "ssdu"
    partition: PartitionPolicy = Field(default_factory=PartitionPolicy)
    unroll: UnrollConfig = Field(default_factory=UnrollConfig)
    resnet: ResNetConfig = Field(default_factory=ResNetConfig)
    seed: int = 0
    shuffle: bool = True
    n_val: int = Field(2, ge=0)

    @field_validator("batch_size")
    @classmethod
    def batch_size_is_one(cls, v: int) -> int:
        if v != 1:
            raise ValueError("batch_size is fixed at 1")
        return v


class Ellipse(BaseModel):
    """One additive ellipse in normalized [-1, 1] coordinates"""

    intensity: float
    axis_y: float = Field(gt=0.0)
    axis_x: float = Field(gt=0.0)
    center_y: float
    center_x: float
    angle_deg: float = 0.0


# Modified Shepp-Logan (Toft) parameters
SHEPP_LOGAN: List[Ellipse] = [
    Ellipse(intensity=1.0, axis_y=0.92, axis_x=0.69, center_y=0.0, center_x=0.0),
    Ellipse(intensity=-0.8, axis_y=0.874, axis_x=0.6624, center_y=0.0184, center_x=0.0),
    Ellipse(intensity=-0.2, axis_y=0.41, axis_x=0.11, center_y=0.0, center_x=0.22, angle_deg=-18.0),
    Ellipse(intensity=-0.2, axis_y=0.31, axis_x=0.16, center_y=0.0, center_x=-0.22, angle_deg=18.0),
    Ellipse(intensity=0.1, axis_y=0.25, axis_x=0.21, center_y=-0.35, center_x=0.0),
    Ellipse(intensity=0.1, axis_y=0.046, axis_x=0.046, center_y=-0.1, center_x=0.0),
    Ellipse(intensity=0.1, axis_y=0.046, axis_x=0.046, center_y=0.1, center_x=0.0),
    Ellipse(intensity=0.1, axis_y=0.023, axis_x=0.046, center_y=0.605, center_x=-0.08),
    Ellipse(intensity=0.1, axis_y=0.023, axis_x=0.023, center_y=0.606, center_x=0.0),
    Ellipse(intensity=0.1, axis_y=0.046, axis_x=0.023, center_y=0.605, center_x=0.06),
]


class PhantomSpec(BaseModel):
    """Synthetic multi-coil slice description"""

    height: int = Field(64, ge=4)
    width: int = Field(64, ge=4)
    ellipses: List[Ellipse] = Field(default_factory=lambda: list(SHEPP_LOGAN))
    phase_amplitude: float = Field(0.5, ge=0.0)  # radians
    n_coils: int = Field(8, ge=1)
    coil_ring_radius: float = Field(1.2, gt=0.0)  # fraction of the half field of view
    coil_bump_width: float = Field(0.45, gt=0.0)  # fraction of the field of view
    noise_std: float = Field(0.0, ge=0.0)  # per complex sample
    jitter: float = Field(0.04, ge=0.0)  # per-slice ellipse perturbation


# ============================================
# KEY=VALUE CONFIG FILES
# ============================================

# CLI flag / flat key -> dotted path inside TrainConfig
FLAG_PATHS: Dict[str, str] = {
    "learning_rate": "learning_rate",
    "n_epochs": "n_epochs",
    "batch_size": "batch_size",
    "adam_beta1": "adam_beta1",
    "adam_beta2": "adam_beta2",
    "adam_eps": "adam_eps",
    "precision": "precision",
    "mode": "mode",
    "seed": "seed",
    "shuffle": "shuffle",
    "n_val": "n_val",
    "rho": "partition.rho",
    "scheme": "partition.scheme",
    "gaussian_std_fraction": "partition.gaussian_std_fraction",
    "center_keep": "partition.center_keep",
    "overlap_fraction": "partition.overlap_fraction",
    "per_slice_seed_base": "partition.per_slice_seed_base",
    "vary_across_slices": "partition.vary_across_slices",
    "identical": "partition.identical",
    "n_unrolls": "unroll.n_unrolls",
    "train_mu": "unroll.train_mu",
    "n_cg_iterations": "unroll.dc.n_cg_iterations",
    "mu": "unroll.dc.mu",
    "n_res_blocks": "resnet.n_res_blocks",
    "n_channels": "resnet.n_channels",
    "kernel_size": "resnet.kernel_size",
    "scale_c": "resnet.scale_c",
    "io_bias": "resnet.io_bias",
    "rb_bias": "resnet.rb_bias",
}


def parse_key_value_text(text: str) -> Dict[str, str]:
    """
    Parse key=value lines

    Args:
        text: File contents; blank lines and '#' comments are ignored

    Returns:
        Ordered dict of raw string values

    Raises:
        ConfigError: On a line without '='
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve_key(key: str) -> str:
    """Map a flat flag name or a dotted path to a dotted path"""
    key = key.replace("-", "_")
    if key in FLAG_PATHS:
        return FLAG_PATHS[key]
    if key in FLAG_PATHS.values():
        return key
    raise ConfigError(f"Unknown config key: {key}")


def apply_overrides(cfg: TrainConfig, overrides: Dict[str, Any]) -> TrainConfig:
    """
    Return a validated copy of cfg with dotted/flat keys replaced

    Args:
        cfg: Base configuration
        overrides: Mapping of key -> value (strings are coerced by pydantic)

    Returns:
        New TrainConfig

    Raises:
        ConfigError: Unknown key or invalid value
    """
    data = cfg.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        path = _resolve_key(key).split(".")
        node = data
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = value

    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid training configuration: {e}") from e


def load_train_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """
    Build a TrainConfig from defaults, an optional key=value file and overrides

    Precedence: overrides > file > defaults
    """
    cfg = TrainConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        cfg = apply_overrides(cfg, parse_key_value_text(text))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def dump_train_config(cfg: TrainConfig) -> str:
    """Serialize every TrainConfig field as dotted key=value lines"""
    lines = []
    data = cfg.model_dump()
    for path in FLAG_PATHS.values():
        node: Any = data
        for part in path.split("."):
            node = node[part]
        if isinstance(node, (tuple, list)):
            node = ",".join(str(v) for v in node)
        lines.append(f"{path} = {node}")
    return "\n".join(lines) + "\n"


def updated(model: BaseModel, **changes: Any) -> BaseModel:
    """Validated copy of a config model with fields replaced"""
    data = {**model.model_dump(), **{k: v.model_dump() if isinstance(v, BaseModel) else v for k, v in changes.items()}}
    try:
        return type(model).model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid {type(model).__name__}: {e}") from e
