"""Run configuration: difficulty splits, defaults, TOML config files.

Difficulty levels fix which angular bins populate the memory bank
(reference) and which are held out (validation). Config values resolve in
the order: built-in defaults < config file < VIEWBENCH_OUTPUT_ROOT
environment override (output root only) < CLI flags.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import DomainError, ParseError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTPUT_ROOT_ENV = "VIEWBENCH_OUTPUT_ROOT"

DEFAULT_SEED = 42
DEFAULT_K = 30
DEFAULT_TEMPERATURE = 0.02
DEFAULT_CAPACITY = 1024000
DEFAULT_CAPACITIES = (320000, 640000, 1024000)
DEFAULT_CHUNK_SIZE = 4


@dataclass(frozen=True)
class DifficultySpec:
    """Named split of bins into memory-bank (reference) and held-out sets."""

    name: str
    reference_bins: tuple[float, ...]
    validation_bins: tuple[float, ...]

    def __post_init__(self) -> None:
        if set(self.reference_bins) & set(self.validation_bins):
            raise DomainError(
                f"difficulty {self.name}: reference and validation bins overlap"
            )


DEFAULT_DIFFICULTIES = (
    DifficultySpec("Easy", (0.0, 30.0, 60.0, 90.0), (15.0, 45.0, 75.0)),
    DifficultySpec("Medium", (0.0, 45.0, 90.0), (15.0, 30.0, 60.0, 75.0)),
    DifficultySpec("Hard", (0.0, 90.0), (15.0, 30.0, 45.0, 60.0, 75.0)),
    DifficultySpec("Extreme", (0.0,), (15.0, 30.0, 45.0, 60.0, 75.0, 90.0)),
)
DIFFICULTY_BY_NAME = {d.name: d for d in DEFAULT_DIFFICULTIES}


def difficulty(name: str) -> DifficultySpec:
    try:
        return DIFFICULTY_BY_NAME[name]
    except KeyError:
        known = ", ".join(DIFFICULTY_BY_NAME)
        raise DomainError(f"unknown difficulty {name!r} (known: {known})") from None


@dataclass(frozen=True)
class RunConfig:
    """Everything a harness run needs, resolvable from file plus overrides."""

    manifest: Path
    feature_roots: dict[str, Path]
    output_root: Path
    capacity: int = DEFAULT_CAPACITY
    capacities: tuple[int, ...] = DEFAULT_CAPACITIES
    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = DEFAULT_SEED
    difficulties: tuple[str, ...] = tuple(d.name for d in DEFAULT_DIFFICULTIES)
    shards: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    save_masks: bool = False
    save_distributions: bool = False
    upsample_mode: str = "bilinear"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError("k must be at least 1")
        if self.temperature <= 0:
            raise DomainError("temperature must be positive")
        if self.capacity < 1 or any(c < 1 for c in self.capacities):
            raise DomainError("capacities must be positive")
        if self.chunk_size < 1 or self.shards < 1:
            raise DomainError("chunk_size and shards must be positive")
        for name in self.difficulties:
            difficulty(name)

    def difficulty_specs(self) -> tuple[DifficultySpec, ...]:
        return tuple(difficulty(name) for name in self.difficulties)


_CONFIG_KEYS = {
    "manifest", "output_root", "capacity", "capacities", "k", "temperature",
    "seed", "difficulties", "shards", "chunk_size", "save_masks",
    "save_distributions", "upsample_mode", "feature_roots",
}


def load_config(
    path: str | Path | None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus explicit overrides.

    ``overrides`` entries set to None are ignored, so CLI flags can be
    passed through unconditionally.
    """
    values: dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ParseError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: invalid config ({exc})") from exc
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(doc)
        base = path.parent

    env = os.environ if env is None else env
    if OUTPUT_ROOT_ENV in env:
        values["output_root"] = env[OUTPUT_ROOT_ENV]

    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _CONFIG_KEYS:
                raise DomainError(f"unknown config override {key!r}")
            values[key] = val

    if "manifest" not in values:
        raise ParseError("config needs a manifest path")
    if "feature_roots" not in values or not values["feature_roots"]:
        raise ParseError("config needs at least one feature root")
    if "output_root" not in values:
        raise ParseError("config needs an output root")

    def _resolve(p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    return RunConfig(
        manifest=_resolve(values["manifest"]),
        feature_roots={
            str(name): _resolve(root)
            for name, root in dict(values["feature_roots"]).items()
        },
        output_root=_resolve(values["output_root"]),
        capacity=int(values.get("capacity", DEFAULT_CAPACITY)),
        capacities=tuple(int(c) for c in values.get("capacities", DEFAULT_CAPACITIES)),
        k=int(values.get("k", DEFAULT_K)),
        temperature=float(values.get("temperature", DEFAULT_TEMPERATURE)),
        seed=int(values.get("seed", DEFAULT_SEED)),
        difficulties=tuple(
            values.get("difficulties", tuple(d.name for d in DEFAULT_DIFFICULTIES))
        ),
        shards=int(values.get("shards", 1)),
        chunk_size=int(values.get("chunk_size", DEFAULT_CHUNK_SIZE)),
        save_masks=bool(values.get("save_masks", False)),
        save_distributions=bool(values.get("save_distributions", False)),
        upsample_mode=str(values.get("upsample_mode", "bilinear")),
    )
