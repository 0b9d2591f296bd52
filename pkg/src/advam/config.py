"""Run configuration: dataclass sections, INI loading and digests."""
import configparser
from dataclasses import asdict, dataclass, field, fields, replace
import hashlib
import json
import math


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 10
    feat_dim: int = 32
    context: int = 15
    snr_grid: tuple = (-5.0, 0.0, 5.0, 10.0)
    n_train: int = 2000
    n_dev: int = 400
    n_test: int = 400
    min_frames: int = 40
    max_frames: int = 80
    seed: int = 1234

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feat_dim < 4:
            raise ConfigError("feat_dim must be >= 4")
        if self.context < 1 or self.context % 2 == 0:
            raise ConfigError(f"context must be a positive odd count, got {self.context}")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one utterance")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("need 1 <= min_frames <= max_frames")
        if not self.snr_grid:
            raise ConfigError("snr_grid is empty")
        if any(math.isnan(s) for s in self.snr_grid):
            raise ConfigError("snr_grid contains NaN")


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "desk"
    depth: int = 4
    base_channels: int = 16
    max_channels: int = 512
    kernel: int = 3
    stride_axis: str = "freq"
    slope: float = 0.2
    d_hidden: int = 64
    c_hidden: int = 128
    c_dropout: float = 0.3

    def validate(self):
        if self.preset not in ("desk", "paper"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.stride_axis not in ("freq", "time"):
            raise ConfigError("stride_axis must be 'freq' or 'time'")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError("slope must lie in (0, 1)")
        if not 0.0 <= self.c_dropout < 1.0:
            raise ConfigError("c_dropout must lie in [0, 1)")
        if min(self.base_channels, self.max_channels, self.kernel, self.d_hidden, self.c_hidden) < 1:
            raise ConfigError("layer sizes must be positive")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.4
    lr: float = 2e-4
    batch_size: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    d_updates_enabled: bool = True
    log_every: int = 1

    def validate(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.log_every < 1:
            raise ConfigError("batch_size, log_every must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = "corpus.bin"
    checkpoints: str = "checkpoints"
    metrics: str = "metrics.csv"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        self.data.validate()
        self.model.validate()
        self.train.validate()
        return self

    def digest(self):
        """Hex digest of everything that influences results (paths excluded)."""
        return _digest({"data": asdict(self.data), "model": asdict(self.model), "train": asdict(self.train)})

    def corpus_digest(self):
        return data_digest(self.data)

    def with_train(self, **changes):
        return replace(self, train=replace(self.train, **changes))


def data_digest(data_cfg):
    return _digest({"data": asdict(data_cfg)})


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# paper-scale values; the generator shape check rejects this preset as-is
PAPER_OVERRIDES = {
    "data": {"feat_dim": 80, "context": 19},
    "model": {"preset": "paper", "depth": 8, "c_hidden": 1024},
    "train": {"batch_size": 256},
}

_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "paths": PathsConfig}


def _parse_value(raw, default, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def apply_overrides(cfg, overrides):
    """``overrides`` maps section -> {key: value}; string values are parsed."""
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    for name, values in overrides.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        current = sections[name]
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        changes = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            if isinstance(value, str) and not isinstance(known[key], str):
                value = _parse_value(value, known[key], f"{name}.{key}")
            changes[key] = value
        sections[name] = replace(current, **changes)
    return RunConfig(**sections)


def paper_preset():
    return apply_overrides(RunConfig(), PAPER_OVERRIDES)


def load_config(path=None, overrides=None):
    """Read an INI file with [data] [model] [train] [paths] sections.

    Every key has a default; unknown sections or keys raise ConfigError. A
    ``preset = paper`` entry in [model] starts from the full-size preset values.
    """
    file_values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        file_values = {s: dict(parser.items(s)) for s in parser.sections()}
    preset = file_values.get("model", {}).get("preset", "desk").strip()
    if preset == "paper":
        base = paper_preset()
    elif preset == "desk":
        base = RunConfig()
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = apply_overrides(base, file_values)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def dump_config(cfg):
    """Render ``cfg`` in the INI format :func:`load_config` reads."""
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
