# Configuration file for the FBNet point cloud completion system
# Network profiles, training parameters and logging settings

import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Mapping, Optional, Tuple

from src.exceptions import ConfigError


class LoggingConfig:
    """Logging configuration"""

    LOG_LEVEL = "INFO"
    LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_FILE = "logs/fbnet.log"
    MAX_LOG_SIZE_MB = 100
    BACKUP_COUNT = 5
    LOGGER_NAME = "FBNet"


class PathConfig:
    """Default locations for generated data and run artifacts"""

    DATA_DIR = "data"
    RUNS_DIR = "runs"
    LOGS_DIR = "logs"
    MANIFEST_NAME = "manifest.json"
    CHECKPOINT_NAME = "best.ckpt"
    HISTORY_NAME = "history.csv"


class MetricConfig:
    """Evaluation defaults"""

    # F-score threshold in the normalized model-unit frame
    FSCORE_TAU = 0.01
    # Halved two-sided mean for the L1 Chamfer distance
    CD_L1_HALVED = True
    # Longest unroll evaluation accepts
    MAX_EVAL_TIME_STEPS = 4


# Environment overrides use this prefix, e.g. FBNET_LEARNING_RATE=5e-4
ENV_PREFIX = "FBNET_"

CHECKPOINT_VERSION = "fbnet-ckpt-v1"


@dataclass(frozen=True)
class HGNetConfig:
    """Coarse encoder-decoder dimensions"""

    edgeconv_dims: Tuple[int, ...] = (64, 128, 512)
    adaptgp_rates: Tuple[int, ...] = (4, 2)
    k: int = 16
    fc_dims: Tuple[int, ...] = (1024, 1024, 128 * 3)
    coarse_size: int = 128
    seed_size: int = 512
    pooling: str = "adaptgp"

    def __post_init__(self):
        if len(self.edgeconv_dims) != len(self.adaptgp_rates) + 1:
            raise ConfigError("HGNet needs exactly one more EdgeConv than pooling layers")
        if any(d <= 0 for d in self.edgeconv_dims + self.fc_dims):
            raise ConfigError("HGNet dimensions must be positive")
        if any(r < 1 for r in self.adaptgp_rates):
            raise ConfigError("pooling rates must be >= 1")
        if self.fc_dims[-1] != 3 * self.coarse_size:
            raise ConfigError(f"last FC width {self.fc_dims[-1]} must equal 3 x coarse_size ({self.coarse_size})")
        if self.k < 1 or self.seed_size < 1:
            raise ConfigError("k and seed_size must be positive")
        if self.pooling not in ("adaptgp", "point", "graph"):
            raise ConfigError(f"unknown pooling method '{self.pooling}'")

    @property
    def global_dim(self) -> int:
        # max and avg pooling of the last EdgeConv
        return 2 * self.edgeconv_dims[-1]


@dataclass(frozen=True)
class FbacConfig:
    """One feedback-aware completion block"""

    r: int = 1
    channels: int = 128
    k: int = 16
    head_hidden: int = 64

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"upsampling ratio must be >= 1, got {self.r}")
        if self.channels < 1 or self.k < 1 or self.head_hidden < 1:
            raise ConfigError("FBAC dimensions must be positive")


# resolution -> (time steps, per-block upsampling ratios)
RESOLUTION_PROFILES: Dict[int, Tuple[int, Tuple[int, ...]]] = {
    2048: (3, (1, 2, 2)),
    4096: (2, (1, 2, 4)),
    8192: (2, (1, 2, 8)),
    16384: (2, (1, 2, 16)),
}

INIT_STRATEGIES = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class FBNetConfig:
    """Full network: HGNet plus three FBAC blocks unrolled over time steps"""

    time_steps: int = 3
    ratios: Tuple[int, ...] = (1, 2, 2)
    seed_size: int = 512
    resolution: int = 2048
    channels: int = 128
    k: int = 16
    feedback: bool = True
    init_strategy: str = "E"
    fps_start: int = 0
    hgnet: HGNetConfig = field(default_factory=HGNetConfig)

    def __post_init__(self):
        if self.time_steps < 1:
            raise ConfigError(f"time_steps must be >= 1, got {self.time_steps}")
        if len(self.ratios) != 3:
            raise ConfigError(f"FBNet stacks exactly 3 FBAC blocks, got {len(self.ratios)} ratios")
        if any(r < 1 for r in self.ratios):
            raise ConfigError("upsampling ratios must be >= 1")
        total = self.seed_size
        for r in self.ratios:
            total *= r
        if total != self.resolution:
            raise ConfigError(
                f"seed_size {self.seed_size} x ratios {self.ratios} = {total}, expected resolution {self.resolution}"
            )
        if self.hgnet.seed_size != self.seed_size:
            raise ConfigError("HGNet seed_size must match FBNet seed_size")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ConfigError(f"unknown input initialization strategy '{self.init_strategy}'")

    def block_config(self, index: int) -> FbacConfig:
        return FbacConfig(r=self.ratios[index], channels=self.channels, k=self.k)

    def block_sizes(self) -> Tuple[int, ...]:
        """Output cardinality of every block in one time step"""
        sizes = []
        n = self.seed_size
        for r in self.ratios:
            n *= r
            sizes.append(n)
        return tuple(sizes)

    @classmethod
    def for_resolution(cls, resolution: int, **overrides) -> "FBNetConfig":
        """Full-size profile for one output resolution"""
        if resolution not in RESOLUTION_PROFILES:
            raise ConfigError(
                f"no profile for resolution {resolution}; choose one of {sorted(RESOLUTION_PROFILES)}"
            )
        time_steps, ratios = RESOLUTION_PROFILES[resolution]
        params = dict(time_steps=time_steps, ratios=ratios, resolution=resolution)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def toy(cls, **overrides) -> "FBNetConfig":
        """Scaled profile for desk-scale runs and fast tests"""
        hgnet = HGNetConfig(
            edgeconv_dims=(32, 64, 256),
            fc_dims=(512, 512, 128 * 3),
            seed_size=256,
            pooling=overrides.pop("pooling", "adaptgp"),
        )
        params = dict(
            time_steps=3,
            ratios=(1, 2, 2),
            seed_size=256,
            resolution=1024,
            channels=64,
            hgnet=hgnet,
        )
        params.update(overrides)
        return cls(**params)

    def with_pooling(self, pooling: str) -> "FBNetConfig":
        return replace(self, hgnet=replace(self.hgnet, pooling=pooling))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "FBNetConfig":
        data = dict(data)
        hgnet = data.pop("hgnet", {})
        hgnet = {key: tuple(value) if isinstance(value, list) else value for key, value in hgnet.items()}
        data = {key: tuple(value) if isinstance(value, list) else value for key, value in data.items()}
        return cls(hgnet=HGNetConfig(**hgnet), **data)


PROFILES = ("toy", "2048", "4096", "8192", "16384")


@dataclass(frozen=True)
class TrainConfig:
    """Training strategy configuration"""

    learning_rate: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0
    precision: str = "float32"
    profile: str = "toy"
    device: str = "auto"
    num_workers: int = 0
    tau: float = MetricConfig.FSCORE_TAU
    # Optional network overrides used by the ablation harness
    time_steps: Optional[int] = None
    feedback: Optional[bool] = None
    init_strategy: Optional[str] = None
    pooling: Optional[str] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("decay_every, batch_size and epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unsupported precision '{self.precision}'")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile '{self.profile}'; choose one of {PROFILES}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.num_workers < 0:
            raise ConfigError("num_workers must be >= 0")

    def network(self, base: Optional[FBNetConfig] = None) -> FBNetConfig:
        """Resolve the FBNet profile (or a custom base network) with this run's overrides applied"""
        overrides = {}
        if self.time_steps is not None:
            overrides["time_steps"] = self.time_steps
        if self.feedback is not None:
            overrides["feedback"] = self.feedback
        if self.init_strategy is not None:
            overrides["init_strategy"] = self.init_strategy
        if base is not None:
            cfg = replace(base, **overrides)
            return cfg.with_pooling(self.pooling) if self.pooling is not None else cfg
        if self.profile == "toy":
            if self.pooling is not None:
                overrides["pooling"] = self.pooling
            return FBNetConfig.toy(**overrides)
        cfg = FBNetConfig.for_resolution(int(self.profile), **overrides)
        if self.pooling is not None:
            cfg = cfg.with_pooling(self.pooling)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in known})


def _coerce(name: str, raw: str):
    """Convert a text value from a config file or the environment to the field's type"""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    kind = str(kinds[name])
    text = raw.strip()
    try:
        if "bool" in kind:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value '{raw}' for {name}")
    return text


def load_train_config(path: Optional[str] = None, overrides: Optional[Mapping] = None) -> TrainConfig:
    """
    Build a TrainConfig from defaults, a config file, the environment and explicit overrides

    Args:
        path: Optional dotenv-style file (KEY=value, keys are TrainConfig field names,
              kebab-case or snake_case, case-insensitive)
        overrides: Values that win over everything else (typically CLI flags)

    Returns:
        Validated TrainConfig
    """
    # deferred until the CLI dependency check has run
    from dotenv import dotenv_values, load_dotenv

    known = {f.name for f in fields(TrainConfig)}
    values: Dict[str, object] = {}

    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        for key, raw in dotenv_values(path, encoding="utf-8").items():
            name = key.strip().lower().replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key '{key}' in {path}")
            if raw is None:
                raise ConfigError(f"config key '{key}' in {path} has no value")
            values[name] = _coerce(name, raw)

    load_dotenv(override=False)
    for name in known:
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _coerce(name, raw)

    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = value

    return TrainConfig(**values)
