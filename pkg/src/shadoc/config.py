"""Model hyperparameters and the flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from shadoc.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    levels: int = 3
    blocks_per_level: int = 2
    heads: int = 2
    dgfn_expansion: int = 2
    spp_scales: tuple[int, ...] = (1, 2, 4, 8)
    std_channels: int = 16
    std_blocks: int = 2
    use_std: bool = True
    use_aggregation: bool = True
    use_cdgf: bool = True

    def __post_init__(self):
        object.__setattr__(self, "spp_scales", tuple(int(s) for s in self.spp_scales))
        self.validate()

    def validate(self) -> None:
        if self.levels != 3:
            raise ConfigError(f"levels is fixed at 3 downsamplings, got {self.levels}")
        if self.base_channels < 1 or self.heads < 1 or self.base_channels % self.heads:
            raise ConfigError(f"base_channels={self.base_channels} must be divisible by heads={self.heads}")
        if self.use_std and (self.std_channels < 1 or self.std_channels % self.heads):
            raise ConfigError(f"std_channels={self.std_channels} must be divisible by heads={self.heads}")
        if self.blocks_per_level < 0 or self.std_blocks < 0 or self.dgfn_expansion < 1:
            raise ConfigError("block counts must be >= 0 and dgfn_expansion >= 1")
        s = self.spp_scales
        if not s or list(s) != sorted(s) or s[0] < 1 or len(set(s)) != len(s):
            raise ConfigError(f"spp_scales must be distinct positive integers in ascending order, got {s}")

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    crop: int = 64
    scale_min: float = 0.8
    scale_max: float = 1.2
    flip_p: float = 0.5
    mixup_p: float = 0.5
    mixup_alpha: float = 0.2
    augment: bool = True
    eval_every: int = 100
    out_dir: str = "."


@dataclass(frozen=True)
class LossConfig:
    w_mse: float = 1.0
    w_ssim: float = 0.3
    w_p: float = 0.7


@dataclass(frozen=True)
class DataConfig:
    train_dir: str = ""
    val_dir: str = ""
    resize: int = 0


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "loss": LossConfig, "data": DataConfig}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> RunConfig:
        parts: dict[str, dict] = {name: {} for name in _SECTIONS}
        for key, raw in values.items():
            section, _, name = key.partition(".")
            kind = _SECTIONS.get(section)
            if kind is None or name not in {f.name for f in fields(kind)}:
                raise ConfigError(f"unknown config key '{key}'")
            default = getattr(kind(), name)
            parts[section][name] = _parse(key, raw.strip(), default)
        return cls(**{name: _SECTIONS[name](**kw) for name, kw in parts.items()})

    @classmethod
    def parse(cls, text: str) -> RunConfig:
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key = key.strip()
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key '{key}'")
            values[key] = value
        return cls.from_dict(values)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text)

    def items(self) -> list[tuple[str, str]]:
        out = []
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                out.append((f"{section}.{f.name}", _format(getattr(obj, f.name))))
        return out

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def resolve_paths(self, base: Path) -> RunConfig:
        """Make relative data/output directories relative to ``base``."""
        def fix(p: str) -> str:
            return str((base / p).resolve()) if p and not Path(p).is_absolute() else p

        data = dataclasses.replace(self.data, train_dir=fix(self.data.train_dir), val_dir=fix(self.data.val_dir))
        train = dataclasses.replace(self.train, out_dir=fix(self.train.out_dir))
        return dataclasses.replace(self, data=data, train=train)
