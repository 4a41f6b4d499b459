"""Run configuration.

Configs are INI-style files (``key = value`` under ``[section]`` headers)
with the sections ``data``, ``model``, ``cprm``, ``csrm``, ``kms``,
``train`` and ``eval``. Every field below is a valid key; anything else is
rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class DataConfig:
    root: str = "data/synthetic"
    fold_file: str = "synthetic"
    fold: int = 0
    image_size: int = 64
    crop_size: int = 0
    # synthetic generator
    n_images: int = 600
    min_shapes: int = 2
    max_shapes: int = 4
    scale_min: float = 0.5
    scale_max: float = 2.0
    seed: int = 0


@dataclass
class ModelConfig:
    backbone: str = "tiny"
    weights: str = ""
    stride: int = 8
    reduce_dim: int = 256
    use_cprm: bool = True
    use_csrm: bool = True
    use_kms: bool = True


@dataclass
class CPRMConfig:
    lambda_fuse: float = 0.5
    fusion_init: float = 0.5
    channel_rank: int = 64


@dataclass
class CSRMConfig:
    mu1: float = 0.7
    mu2: float = 0.6
    step_mu1: float = 0.05
    step_mu2: float = 0.02
    cpm_iters: int = 3
    gamma1: float = 0.9
    gamma2: float = 0.1
    tau: float = 10.0


@dataclass
class KMSConfig:
    rho: float = 0.5
    lambda_warm: float = 0.8
    n_known: int = 0  # 0: take from the fold's training classes


@dataclass
class TrainConfig:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    power: float = 0.9
    batch_size: int = 8
    max_iter: int = 1000
    iters_per_epoch: int = 100
    eta: float = 1.0
    seed: int = 0
    out_dir: str = "runs/default"


@dataclass
class EvalConfig:
    n_pairs: int = 1000
    k: int = 1
    seed: int = 0
    batch_size: int = 25


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    cprm: CPRMConfig = field(default_factory=CPRMConfig)
    csrm: CSRMConfig = field(default_factory=CSRMConfig)
    kms: KMSConfig = field(default_factory=KMSConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, dict[str, Any]]) -> "Config":
        cfg = cls()
        for section, values in d.items():
            apply_section(cfg, section, values)
        return cfg

    def replace(self, **sections: dict[str, Any]) -> "Config":
        """Return a deep copy with the given ``section={key: value}`` overrides."""
        cfg = Config.from_dict(self.to_dict())
        for section, values in sections.items():
            apply_section(cfg, section, values)
        return cfg


SECTIONS = tuple(f.name for f in dataclasses.fields(Config))


def _coerce(value: Any, typ: Any, where: str) -> Any:
    if not isinstance(value, str):
        return typ(value) if typ in (int, float) and not isinstance(value, bool) else value
    try:
        if typ is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ.__name__}") from None
    return value


def apply_section(cfg: Config, section: str, values: dict[str, Any]) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; valid sections: {', '.join(SECTIONS)}")
    target = getattr(cfg, section)
    types = {f.name: f.type for f in dataclasses.fields(target)}
    builtin = {"int": int, "float": float, "bool": bool, "str": str}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(
                f"unknown key {key!r} in [{section}]; valid keys: {', '.join(types)}"
            )
        setattr(target, key, _coerce(value, builtin[types[key]], f"[{section}] {key}"))


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    parser.read(path)
    cfg = Config()
    for section in parser.sections():
        apply_section(cfg, section, dict(parser[section]))
    return cfg


def dump_config(cfg: Config, path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in cfg.to_dict().items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def parse_overrides(items: list[str]) -> dict[str, dict[str, str]]:
    """Parse ``section.key=value`` strings from the command line."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out
