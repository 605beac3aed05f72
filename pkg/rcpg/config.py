"""Experiment configuration: JSON schema, presets, environment defaults and error types."""
from __future__ import annotations

import hashlib
import json
import os
import re
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from trainer import Algorithm, TrainerConfig

load_dotenv()

PACKAGE_VERSION = "0.1.0"

DEFAULT_OUTPUT_DIR = os.getenv("RCPG_OUTPUT_DIR", "runs")
DEFAULT_JOBS = int(os.getenv("RCPG_JOBS", "1"))
DEFAULT_LOG_LEVEL = os.getenv("RCPG_LOG_LEVEL", "INFO")
DEFAULT_BASE_SEED = int(os.getenv("RCPG_BASE_SEED", "0"))

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {"seeds": list(range(5)), "training_episodes": 1000, "runs_per_setting": 20},
    "paper": {"seeds": list(range(20)), "training_episodes": 5000, "runs_per_setting": 50},
}
ESTIMATION_EPISODES = {"inventory": 100, "nav1": 100, "nav2": 10_000}
LAMBDA_INIT = {"inventory": 50.0, "nav1": 1.0, "nav2": 1.0}
ALL_ALGORITHMS = [a for a in Algorithm]


class ConfigError(ValueError):
    """Every problem found in a configuration document."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class CacheMismatchError(RuntimeError):
    pass


class PipelineError(RuntimeError):
    pass


class TrainerOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy_lr: Optional[float] = Field(None, gt=0)
    multiplier_lr: Optional[float] = Field(None, gt=0)
    adversary_lr: Optional[float] = Field(None, gt=0)
    adversary_multiplier_lr: Optional[float] = Field(None, gt=0)
    critic_lr: Optional[float] = Field(None, gt=0)
    entropy_weight: Optional[float] = Field(None, ge=0)
    lambda_init: Optional[float] = Field(None, ge=0)
    lambda_adv_init: Optional[float] = Field(None, ge=0)
    hidden_width: Optional[int] = Field(None, gt=0)
    pretrain_tolerance: Optional[float] = Field(None, gt=0)
    pretrain_max_iters: Optional[int] = Field(None, ge=0)
    restore_max_iters: Optional[int] = Field(None, ge=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domain: Literal["inventory", "nav1", "nav2"]
    algorithms: List[Algorithm] = Field(default_factory=lambda: list(ALL_ALGORITHMS), min_length=1)
    preset: Literal["desk", "paper"] = "desk"
    seeds: Optional[List[int]] = Field(None, min_length=1)
    estimation_episodes: Optional[int] = Field(None, gt=0)
    delta: float = Field(0.10, gt=0, lt=1)
    training_episodes: Optional[int] = Field(None, gt=0)
    nominal_episodes: int = Field(100, ge=0)
    runs_per_setting: Optional[int] = Field(None, gt=0)
    n_samp: int = Field(32, ge=1)
    inventory_states: int = Field(20, ge=2)
    cell_tables: Optional[str] = None
    output_dir: str = Field(default_factory=lambda: DEFAULT_OUTPUT_DIR, min_length=1)
    jobs: int = Field(default_factory=lambda: DEFAULT_JOBS, ge=1)
    base_seed: int = Field(default_factory=lambda: DEFAULT_BASE_SEED, ge=0)
    trainer: TrainerOverrides = Field(default_factory=TrainerOverrides)

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, seeds):
        if seeds is not None:
            if any(s < 0 for s in seeds):
                raise ValueError("seeds must be nonnegative")
            if len(set(seeds)) != len(seeds):
                raise ValueError("seeds must be distinct")
        return seeds

    @field_validator("algorithms")
    @classmethod
    def _distinct_algorithms(cls, algorithms):
        if len(set(algorithms)) != len(algorithms):
            raise ValueError("algorithms must be distinct")
        return algorithms

    def resolved(self) -> "ExperimentConfig":
        """Copy with preset and per-domain defaults filled in."""
        preset = PRESETS[self.preset]
        return self.model_copy(update={
            "seeds": self.seeds if self.seeds is not None else list(preset["seeds"]),
            "estimation_episodes": self.estimation_episodes or ESTIMATION_EPISODES[self.domain],
            "training_episodes": self.training_episodes or preset["training_episodes"],
            "runs_per_setting": self.runs_per_setting or preset["runs_per_setting"],
        })

    def trainer_config(self, algorithm: Algorithm, seed: int) -> TrainerConfig:
        cfg = self.resolved()
        overrides = cfg.trainer.model_dump(exclude_none=True)
        base = {
            "algorithm": Algorithm(algorithm),
            "episodes": cfg.training_episodes,
            "nominal_episodes": cfg.nominal_episodes,
            "n_samp": cfg.n_samp,
            "lambda_init": LAMBDA_INIT[cfg.domain],
            "lambda_adv_init": LAMBDA_INIT[cfg.domain],
            "seed": seed,
        }
        return TrainerConfig(**{**base, **overrides})

    def estimation_params(self) -> Dict[str, Any]:
        cfg = self.resolved()
        return {
            "domain": cfg.domain,
            "estimation_episodes": cfg.estimation_episodes,
            "delta": cfg.delta,
            "base_seed": cfg.base_seed,
            "inventory_states": cfg.inventory_states,
            "cell_tables": cfg.cell_tables,
        }

    def canonical_json(self) -> str:
        data = self.resolved().model_dump(mode="json", exclude={"output_dir", "jobs"})
        return json.dumps(data, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _line_of(text: str, loc: Tuple[Any, ...]) -> int:
    """Line of the innermost named key in `loc`, or 1 when the key is absent from the text."""
    for part in reversed(loc):
        if isinstance(part, str):
            match = re.search(rf'"{re.escape(part)}"\s*:', text)
            if match:
                return text.count("\n", 0, match.start()) + 1
    return 1


def validate_config(text: str) -> Tuple[ExperimentConfig, List[str]]:
    """Parse and validate a JSON config; returns the resolved config and any warnings."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}: <document>: {e.msg}"]) from e
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: <document>: expected a JSON object"])

    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        errors = []
        for err in e.errors():
            loc = tuple(err["loc"])
            field_path = ".".join(str(p) for p in loc) or "<document>"
            errors.append(f"line {_line_of(text, loc)}: {field_path}: {err['msg']}")
        raise ConfigError(errors) from e

    resolved = cfg.resolved()
    errors = []
    if cfg.nominal_episodes > resolved.training_episodes:
        errors.append(
            f"line {_line_of(text, ('nominal_episodes',))}: nominal_episodes: "
            f"{cfg.nominal_episodes} exceeds training_episodes {resolved.training_episodes}"
        )
    if cfg.cell_tables is not None and cfg.domain == "inventory":
        errors.append(f"line {_line_of(text, ('cell_tables',))}: cell_tables: only navigation domains use cell tables")
    if errors:
        raise ConfigError(errors)

    warnings = []
    for name in ("seeds", "estimation_episodes", "training_episodes", "runs_per_setting"):
        if name not in raw:
            warnings.append(f"{name} not given; using {getattr(resolved, name)}")
    return resolved, warnings


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> Tuple[ExperimentConfig, List[str]]:
    """Read a config file, apply command-line overrides, validate."""
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError([f"line 1: <document>: cannot read {path}: {e}"]) from e
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if overrides:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError([f"line {e.lineno}: <document>: {e.msg}"]) from e
        if isinstance(raw, dict):
            raw.update(overrides)
            text = json.dumps(raw, indent=2)
    return validate_config(text)
