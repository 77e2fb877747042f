"""Pipeline configuration loading, validation and path resolution."""

from __future__ import annotations

import json
import math
import os
from importlib import resources
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .compress import ClusterConfig
from .env import MAP_IDS, EnvConfig
from .policy import TrainerConfig
from .property import (
    PropertyFormatError,
    SafetyProperty,
    load_properties,
    mapless_navigation_properties,
    particle_world_properties,
)
from .regions import SplitterConfig
from .verifier import VerifierBudget

CONFIG_ENV_VAR = "GUIDED_SHIELD_CONFIG"
BUILTIN_PROPERTIES = ("particle_world", "mapless_navigation")


class ConfigError(ValueError):
    """Raised when the pipeline configuration is missing or out of range."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSection(_Section):
    seed: int = 12
    success_floor: float = Field(0.80, ge=0.0)
    max_iterations: int = Field(500, ge=1)
    population: int = Field(8, ge=1)
    sigma: float = Field(0.02, gt=0.0)
    episodes_per_eval: int = Field(20, ge=1)
    eval_episodes: int = Field(50, ge=1)

    def trainer_config(self, maps: tuple[int, ...]) -> TrainerConfig:
        return TrainerConfig(
            success_floor=self.success_floor,
            max_iterations=self.max_iterations,
            population=self.population,
            sigma=self.sigma,
            episodes_per_eval=self.episodes_per_eval,
            eval_episodes=self.eval_episodes,
            maps=maps,
        )


class SplitterSection(_Section):
    samples_per_region: int = Field(354, ge=1)
    violation_fraction_threshold: float = Field(0.3, ge=0.0, le=1.0)
    max_depth: int = Field(14, ge=0)
    epsilon: float = Field(0.01, gt=0.0, lt=1.0)
    delta: float = Field(0.03, gt=0.0, lt=1.0)
    seed: int = 0
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _enough_samples(self) -> "SplitterSection":
        needed = math.ceil(math.log(1.0 / self.delta) / self.epsilon)
        if self.samples_per_region < needed:
            raise ValueError(
                f"samples_per_region must be >= ln(1/delta)/epsilon = {needed}"
            )
        return self

    def splitter_config(self) -> SplitterConfig:
        return SplitterConfig(**self.model_dump())


class VerifierSection(_Section):
    max_branches: int = Field(1_000_000, ge=1)
    time_limit_s: float = Field(60.0, gt=0.0)
    relu_split_limit: int = Field(16, ge=0)
    workers: int = Field(1, ge=1)
    margin: float = Field(0.0, ge=0.0)

    def budget(self) -> VerifierBudget:
        return VerifierBudget(
            max_branches=self.max_branches,
            time_limit_s=self.time_limit_s,
            relu_split_limit=self.relu_split_limit,
        )


class ClusterSection(_Section):
    target_count: int = Field(50, ge=1)
    max_waste: float = Field(0.2, ge=0.0)
    index_resolution: int = Field(32, ge=1)
    index_dims: int = Field(2, ge=1, le=2)

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(target_count=self.target_count, max_waste=self.max_waste)


class RunSection(_Section):
    modes: list[Literal["noshield", "full", "guided"]] = ["noshield", "full", "guided"]
    episodes: int = Field(100, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [12, 66, 99], min_length=1)
    maps: list[int] = Field(default_factory=lambda: list(MAP_IDS), min_length=1)
    formula_multiplier: int = Field(1, ge=1)
    max_steps: int = Field(100, ge=1)

    @field_validator("maps")
    @classmethod
    def _known_maps(cls, maps: list[int]) -> list[int]:
        unknown = sorted(set(maps) - set(MAP_IDS))
        if unknown:
            raise ValueError(f"unknown map ids {unknown}; expected a subset of {list(MAP_IDS)}")
        return maps

    def env_config(self) -> EnvConfig:
        return EnvConfig(max_steps=self.max_steps)


class PipelineConfig(_Section):
    """Every stage's settings plus the artifact locations."""

    network: str = "output/policy.json"
    properties: str = "particle_world"
    output_dir: str = "output"
    train: TrainSection = Field(default_factory=TrainSection)
    splitter: SplitterSection = Field(default_factory=SplitterSection)
    verifier: VerifierSection = Field(default_factory=VerifierSection)
    cluster: ClusterSection = Field(default_factory=ClusterSection)
    run: RunSection = Field(default_factory=RunSection)

    def output_path(self, name: str) -> Path:
        return Path(self.output_dir) / name


def _candidate_paths() -> list[Path]:
    candidates = []
    from_env = os.environ.get(CONFIG_ENV_VAR)
    if from_env:
        candidates.append(Path(from_env))
    candidates.append(Path.cwd() / "config.json")
    return candidates


def load_config(config_path: str | None = None) -> tuple[PipelineConfig, str]:
    """Load and validate the pipeline config; return `(config, resolved_path)`.

    Lookup order: explicit path, `$GUIDED_SHIELD_CONFIG`, `./config.json`.
    """
    if config_path is None:
        for candidate in _candidate_paths():
            if candidate.exists():
                config_path = str(candidate)
                break
        else:
            raise ConfigError("config.json not found (pass --config or set $GUIDED_SHIELD_CONFIG)")

    try:
        with open(config_path, encoding="utf-8") as f:
            raw: Any = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {config_path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_path}: invalid JSON ({e})") from e

    try:
        config = PipelineConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{config_path}: {location}: {first['msg']}") from e
    return resolve_artifact_paths(config, config_path), config_path


def resolve_artifact_paths(config: PipelineConfig, config_path: str | None) -> PipelineConfig:
    """Resolve relative network, properties and output paths against the config location."""
    config_dir = Path(config_path).parent if config_path else Path.cwd()

    def resolve(value: str) -> str:
        path = Path(value)
        return str(path if path.is_absolute() else config_dir / path)

    updates = {
        "network": resolve(config.network),
        "output_dir": resolve(config.output_dir),
    }
    if config.properties not in BUILTIN_PROPERTIES:
        updates["properties"] = resolve(config.properties)
    return config.model_copy(update=updates)


def resolve_properties(config: PipelineConfig) -> list[SafetyProperty]:
    """Builtin property set or property file, with the verifier margin applied where unset."""
    if config.properties == "particle_world":
        props = particle_world_properties()
    elif config.properties == "mapless_navigation":
        props = mapless_navigation_properties()
    else:
        path = Path(config.properties)
        if not path.exists():
            raise ConfigError(f"properties file not found: {path}")
        try:
            props = load_properties(path)
        except PropertyFormatError as e:
            raise ConfigError(str(e)) from e

    margin = config.verifier.margin
    return [p if p.margin > 0 else p.with_margin(margin) for p in props]


def bundled_data_path(*parts: str) -> Path:
    """Path of a file shipped under the package's data directory."""
    return Path(str(resources.files("guided_shield").joinpath("data", *parts)))
