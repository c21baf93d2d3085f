"""Run configuration: a flat ``key = value`` text file mapped onto :class:`TrainConfig`."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .baselines import SCHEMES, SchemeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    split_dir: str = ""
    dataset: str = ""
    scheme: str = "default"
    adt_alpha: float = 0.05
    adt_delta_max: float = 0.2
    adt_beta: float = 0.25
    d: int = 64
    batch_size: int = 256
    lr: float = 1e-3
    lr_c: float = 1e-3
    l2: float = 1e-5
    l2_c: float = 1e-6
    n_actions: int = 3
    n_neg: int = 4
    max_epochs: int = 100
    patience: int = 6
    min_delta: float = 1e-5
    gamma: float = 0.9
    beta2_c: float = 0.999
    seed: int = 0
    ks: tuple[int, ...] = (10, 20, 50)
    init_scale: float = 0.1
    hidden: tuple[int, ...] = (64, 32)
    init_weight: float = 1.0
    init_var: float = 0.25
    n_neg_eval: int = 100
    log_wall_time: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        checks = [
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.lr > 0 and self.lr_c > 0, "lr and lr_c must be positive"),
            (self.l2 >= 0 and self.l2_c >= 0, "l2 and l2_c must be non-negative"),
            (self.d >= 1, "d must be >= 1"),
            (self.n_actions >= 1, "n_actions must be >= 1"),
            (self.n_neg >= 1, "n_neg must be >= 1"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (0.0 <= self.gamma <= 1.0, "gamma must lie in [0, 1]"),
            (0.0 <= self.beta2_c < 1.0, "beta2_c must lie in [0, 1)"),
            (len(self.hidden) == 2 and min(self.hidden) >= 1, "hidden must be two positive sizes"),
            (len(self.ks) >= 1 and min(self.ks) >= 1, "ks must be positive integers"),
            (self.init_weight > 0 and self.init_var > 0, "init_weight and init_var must be positive"),
            (self.n_neg_eval >= 1, "n_neg_eval must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.scheme_config
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(self.scheme, self.adt_alpha, self.adt_delta_max, self.adt_beta)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _convert(name: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def _defaults() -> dict:
    return {f.name: f.default for f in fields(TrainConfig)}


def parse_pairs(pairs: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    defaults = _defaults()
    values = dataclasses.asdict(base) if base is not None else {}
    for key, text in pairs.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, defaults[key], text)
    return TrainConfig(**values)


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def load_config(path: str | os.PathLike | None = None, overrides=()) -> TrainConfig:
    """Read a ``key = value`` file (``#`` comments allowed) and apply overrides."""
    pairs: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = parse_override(line)
            pairs[key] = value
    for item in overrides:
        key, value = parse_override(item)
        pairs[key] = value
    return parse_pairs(pairs)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
