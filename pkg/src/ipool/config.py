"""Training configuration shared by the network, trainer and CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

from .pooling import PoolingConfig, PoolingMode


class ReadoutMode(str, Enum):
    SUM = "sum"
    MEAN = "mean"


class Depth(str, Enum):
    BASE_0 = "base-0"
    BASE_1 = "base-1"
    BASE_2 = "base-2"
    IPOOL_1 = "ipool-1"
    IPOOL_2 = "ipool-2"

    @property
    def n_modules(self) -> int:
        return {"base-0": 1, "base-1": 2, "base-2": 3, "ipool-1": 2, "ipool-2": 3}[self.value]

    @property
    def pooled(self) -> bool:
        return self.value.startswith("ipool")


# hyperparameter grids searched in the original experiments
GRIDS = {
    "learning_rate": (1e-2, 1e-3, 1e-4),
    "weight_decay": (0.0, 3e-5, 1e-4),
    "dropout": (0.0, 0.5),
    "hidden": (30, 64),
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    dropout: float = 0.0
    batch_size: int = 20
    epochs: int = 100
    folds: int = 10
    ratio: float = 0.25
    s: int = 1
    k: int = 1
    mode: PoolingMode = PoolingMode.LOCAL
    depth: Depth = Depth.IPOOL_1
    hidden: int = 30
    readout: ReadoutMode = ReadoutMode.SUM
    weighted: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PoolingMode(self.mode))
        object.__setattr__(self, "depth", Depth(self.depth))
        object.__setattr__(self, "readout", ReadoutMode(self.readout))

    @property
    def pooling(self) -> PoolingConfig:
        return PoolingConfig(k=self.k, s=self.s, ratio=self.ratio, mode=self.mode,
                             weighted=self.weighted)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def problems(self, allow_any_hyper: bool = False) -> list[str]:
        """Every violated constraint, as human-readable messages."""
        out = []
        if not allow_any_hyper:
            for name, grid in GRIDS.items():
                if getattr(self, name) not in grid:
                    out.append(f"{name}={getattr(self, name)} is outside the grid {list(grid)}"
                               " (pass --allow-any-hyper to override)")
        if self.learning_rate <= 0:
            out.append(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            out.append(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0 <= self.dropout < 1:
            out.append(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 < self.ratio <= 1:
            out.append(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.s not in (1, 2):
            out.append(f"s must be 1 or 2, got {self.s}")
        for name in ("k", "batch_size", "epochs", "hidden"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.folds < 2:
            out.append(f"folds must be at least 2, got {self.folds}")
        return out

    def validate(self, allow_any_hyper: bool = False) -> "TrainConfig":
        problems = self.problems(allow_any_hyper)
        if problems:
            raise ValueError("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _plain(value):
    return value.value if isinstance(value, Enum) else value


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_CASTS = {"float": float, "int": int, "bool": bool}


def coerce(name: str, value):
    """Cast a raw value (e.g. a CLI string) to the type of a config field."""
    if name not in FIELD_TYPES:
        raise KeyError(f"unknown config key {name!r}")
    kind = FIELD_TYPES[name]
    if kind == "bool" and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind in _CASTS:
        return _CASTS[kind](value)
    return str(value).lower()


def load_config(path, base: TrainConfig | None = None, **overrides) -> TrainConfig:
    """Read a flat ``key: value`` YAML file, then apply ``overrides``."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a flat mapping of config keys")
    nested = [key for key, value in raw.items() if isinstance(value, (dict, list))]
    if nested:
        raise ValueError(f"{path}: config must be flat, nested values for {nested}")
    raw.update({key: value for key, value in overrides.items() if value is not None})
    unknown = sorted(set(raw) - set(FIELD_TYPES))
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    values = {key: coerce(key, value) for key, value in raw.items()}
    return (base or TrainConfig()).replace(**values)
