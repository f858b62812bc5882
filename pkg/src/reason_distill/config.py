"""Experiment configuration: TOML input, profiles, and the resolved artifact.

A configuration file describes one experiment end to end (data generation,
model size, losses, optimizer, teacher backend, exam seed, stop policy).  Two
profiles bundle learning-rate defaults: ``desk`` for minutes-scale runs of the
bundled micro model and ``paper`` for full-scale settings.  Whatever the
inputs, the fully resolved configuration is written next to the experiment's
artifacts as ``config.resolved.json``; credentials are referenced by
environment-variable name only and never stored.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .synthetic import SyntheticTaskSpec
from .tailor import LossConfig, OptimizerConfig

PROFILES = {
    "desk": {"learning_rate": 3e-4, "later_round_lr_scale": 0.7},
    "paper": {"learning_rate": 1e-6, "later_round_lr_scale": 0.7},
}

RESOLVED_NAME = "config.resolved.json"


@dataclass(frozen=True)
class ModelSettings:
    """Architecture knobs; vocabulary size comes from the tokenizer at runtime."""

    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    context_length: int = 320
    seed: int = 42


@dataclass(frozen=True)
class TeacherSettings:
    backend: str = "oracle"
    success_probability: float = 0.75
    feedback_bonus: float = 0.2
    seed: int = 7
    model: str = "teacher"
    base_url_env: str = "TEACHER_BASE_URL"
    api_key_env: str = "TEACHER_API_KEY"

    def __post_init__(self) -> None:
        if self.backend not in ("oracle", "http"):
            raise ConfigError(f"teacher backend must be oracle or http, got {self.backend!r}")


@dataclass(frozen=True)
class StopPolicy:
    """When to end the round loop."""

    min_accuracy_gain: float = 1.0
    max_rounds: int = 4
    min_new_data: int = 1

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ConfigError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.min_new_data < 0:
            raise ConfigError(f"min_new_data must be >= 0, got {self.min_new_data}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 42
    profile: str = "desk"
    data: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    model: ModelSettings = field(default_factory=ModelSettings)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig | None = None
    later_round_lr_scale: float | None = None
    teacher: TeacherSettings = field(default_factory=TeacherSettings)
    exam_seed: int = 11
    stop: StopPolicy = field(default_factory=StopPolicy)

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}"
            )
        profile = PROFILES[self.profile]
        if self.optimizer is None:
            object.__setattr__(
                self, "optimizer", OptimizerConfig(learning_rate=profile["learning_rate"])
            )
        if self.later_round_lr_scale is None:
            object.__setattr__(
                self, "later_round_lr_scale", profile["later_round_lr_scale"]
            )
        if not 0 < self.later_round_lr_scale <= 1:
            raise ConfigError(
                f"later_round_lr_scale must lie in (0, 1], got {self.later_round_lr_scale}"
            )

    # -- serialization ------------------------------------------------------

    def resolved(self) -> dict:
        """Fully explicit, JSON-ready view; holds no secrets, only env names."""
        blob = asdict(self)
        return blob

    def resolved_json(self) -> str:
        return json.dumps(self.resolved(), sort_keys=True, indent=2) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.resolved_json().encode("utf-8")).hexdigest()

    def save_resolved(self, directory: str | Path) -> Path:
        path = Path(directory) / RESOLVED_NAME
        path.write_text(self.resolved_json(), encoding="utf-8")
        return path

    @classmethod
    def from_resolved(cls, path: str | Path) -> "ExperimentConfig":
        try:
            blob = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"unreadable resolved config {path}: {exc}") from exc
        return _config_from_mapping(blob, source=str(path))


def _coerce_section(section_cls, mapping: dict, *, source: str, name: str):
    allowed = {f.name for f in fields(section_cls)}
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(
            f"{source}: unknown key(s) {sorted(unknown)} in [{name}]"
        )
    coerced = {}
    for f in fields(section_cls):
        if f.name not in mapping:
            continue
        value = mapping[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return section_cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"{source}: bad [{name}] section: {exc}") from exc


_SECTIONS = {
    "data": SyntheticTaskSpec,
    "model": ModelSettings,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "teacher": TeacherSettings,
    "stop": StopPolicy,
}

_TOP_LEVEL_SCALARS = {"name", "seed", "profile", "later_round_lr_scale", "exam_seed"}


def _config_from_mapping(blob: dict, *, source: str) -> ExperimentConfig:
    unknown = set(blob) - _TOP_LEVEL_SCALARS - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigError(f"{source}: unknown top-level key(s) {sorted(unknown)}")
    kwargs: dict = {}
    head = blob.get("experiment", {})
    if not isinstance(head, dict):
        raise ConfigError(f"{source}: [experiment] must be a table")
    bad_head = set(head) - _TOP_LEVEL_SCALARS
    if bad_head:
        raise ConfigError(f"{source}: unknown key(s) {sorted(bad_head)} in [experiment]")
    for key in _TOP_LEVEL_SCALARS:
        if key in head:
            kwargs[key] = head[key]
        if key in blob:
            kwargs[key] = blob[key]
    for key, section_cls in _SECTIONS.items():
        if key in blob:
            if not isinstance(blob[key], dict):
                raise ConfigError(f"{source}: [{key}] must be a table")
            kwargs[key] = _coerce_section(section_cls, blob[key], source=source, name=key)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str | Path, *, profile: str | None = None) -> ExperimentConfig:
    """Read a TOML experiment description, optionally forcing a profile."""
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            blob = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    if profile is not None:
        blob.setdefault("experiment", {})
        if not isinstance(blob["experiment"], dict):
            raise ConfigError(f"{path}: [experiment] must be a table")
        blob["experiment"]["profile"] = profile
    return _config_from_mapping(blob, source=str(path))
