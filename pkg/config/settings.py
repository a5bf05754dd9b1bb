"""Bench configuration: dataclass defaults plus a versioned JSON file format.

A config file looks like

    {"version": 1, "sample_count": 20, "solver": {"max_iters": 300, "weights": {"alpha_T": 5.0}}}

Keys left out keep their defaults; unknown keys are rejected.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from services.energy import EnergyWeights
from services.errors import ConfigError, FmoError
from services.ncc import DEFAULT_PAD_FRACTION

CONFIG_VERSION = 1


class InitMode(str, Enum):
    DIFFERENCE = "difference"
    SWEEP = "sweep"


@dataclass(frozen=True)
class SolverConfig:
    n_subframes: int = 8
    max_iters: int = 500
    step: float = 0.05
    momentum: float = 0.9
    rel_tol: float = 1e-6
    patience: int = 10
    seed: int = 0
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    pad_fraction: float = DEFAULT_PAD_FRACTION
    # Re-search the best NCC shifts every k iterations; 1 searches on every evaluation.
    shift_refresh: int = 1
    init_mode: str = InitMode.SWEEP.value
    max_halvings: int = 30

    def __post_init__(self):
        if self.n_subframes < 2:
            raise ConfigError(f"n_subframes must be >= 2, got {self.n_subframes}")
        if not self.step > 0:
            raise ConfigError(f"step must be > 0, got {self.step}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_iters < 0 or self.patience < 1 or self.max_halvings < 0:
            raise ConfigError("max_iters, patience and max_halvings must be non-negative (patience >= 1)")
        if self.rel_tol < 0:
            raise ConfigError(f"rel_tol must be >= 0, got {self.rel_tol}")
        if self.shift_refresh < 1:
            raise ConfigError(f"shift_refresh must be >= 1, got {self.shift_refresh}")
        if not 0.0 <= self.pad_fraction < 0.5:
            raise ConfigError(f"pad_fraction must lie in [0, 0.5), got {self.pad_fraction}")
        try:
            InitMode(self.init_mode)
        except ValueError as exc:
            raise ConfigError(f"unknown init_mode {self.init_mode!r}") from exc
        if not isinstance(self.weights, EnergyWeights):
            raise ConfigError("weights must be an EnergyWeights instance")


@dataclass(frozen=True)
class BenchConfig:
    dataset_dir: str = "dataset"
    canvas: Tuple[int, int] = (64, 64)
    n_gt: int = 24
    solver: SolverConfig = field(default_factory=SolverConfig)
    eval_l: int = 8
    eval_epsilon: float = 1.0
    sample_count: int = 20
    seed: int = 0
    jobs: int = 1
    dynamic_background: bool = False
    background_kind: Optional[str] = None
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "canvas", tuple(int(v) for v in self.canvas))
        if len(self.canvas) != 2:
            raise ConfigError(f"canvas must be (width, height), got {self.canvas}")
        for name in ("n_gt", "eval_l", "sample_count", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if min(self.canvas) < 1:
            raise ConfigError(f"canvas must be positive, got {self.canvas}")
        if not 0.0 < self.eval_epsilon <= 1.0:
            raise ConfigError(f"eval_epsilon must lie in (0, 1], got {self.eval_epsilon}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")


def _check_keys(data: Dict[str, Any], cls, prefix: str = "") -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}{key!r}")


def _build(cls, data: Dict[str, Any], prefix: str, nested: Dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be a JSON object")
    _check_keys(data, cls, prefix)
    values = dict(data)
    for key, builder in nested.items():
        if key in values:
            values[key] = builder(values[key])
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError, FmoError) as exc:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'}: {exc}") from exc


def weights_from_dict(data: Dict[str, Any]) -> EnergyWeights:
    return _build(EnergyWeights, data, "solver.weights.", {})


def solver_from_dict(data: Dict[str, Any]) -> SolverConfig:
    return _build(SolverConfig, data, "solver.", {"weights": weights_from_dict})


def config_from_dict(data: Dict[str, Any]) -> BenchConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {data.get('version')!r}")
    body = {k: v for k, v in data.items() if k != "version"}
    return _build(BenchConfig, body, "", {"solver": solver_from_dict})


def load_config(path: Optional[str]) -> BenchConfig:
    """BenchConfig from a JSON file; no path gives the defaults."""
    if not path:
        return BenchConfig()
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: BenchConfig) -> Dict[str, Any]:
    data = {"version": CONFIG_VERSION}
    data.update(asdict(cfg))
    data["canvas"] = list(cfg.canvas)
    return data


def dump_config(cfg: BenchConfig, path: Optional[str] = None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    if path:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as handle:
            handle.write(text)
    return text


def with_overrides(cfg: BenchConfig, **overrides) -> BenchConfig:
    """Copy of cfg with the given fields replaced; None values are ignored."""
    values = {k: v for k, v in overrides.items() if v is not None}
    if "seed" in values:
        values["solver"] = replace(values.get("solver", cfg.solver), seed=values["seed"])
    try:
        return replace(cfg, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
