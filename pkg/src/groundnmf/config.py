"""Run configuration documents (JSON) with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .datagen import GenConfig, LabelRule
from .io import FormatError, read_json
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "loadings"
    n_folds: int = 5
    strength_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    penalty: Optional[str] = None
    lambdas: tuple[float, ...] = (0.1, 0.4, 1.0)
    top_k: int = 15
    zero_tol: float = 1e-12
    min_terms: int = 5

    def __post_init__(self):
        object.__setattr__(self, "strength_grid", tuple(float(v) for v in self.strength_grid))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if self.mode not in ("loadings", "raw", "augmented"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.penalty not in (None, "l1", "l2"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.n_folds < 2 or self.top_k < 1 or self.min_terms < 0:
            raise ValueError("n_folds must be >= 2, top_k >= 1, min_terms >= 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        out = json.loads(json.dumps(asdict(self)))
        for section, keys in _RESERVED.items():
            for key in keys:
                out[section].pop(key, None)
        return out

    @property
    def solver_config(self) -> SolverConfig:
        return self.solver.replace(rng_seed=self.seed)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {"solver": SolverConfig, "gen": GenConfig, "eval": EvalConfig}
_NESTED = {("gen", "label_rule"): LabelRule}
# the top-level seed drives every random stream
_RESERVED = {"solver": {"rng_seed"}}


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"'{prefix}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)} - _RESERVED.get(prefix, set())
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{prefix}.{key}'")
    kwargs = dict(data)
    for (section, key), sub in _NESTED.items():
        if prefix == section and kwargs.get(key) is not None:
            kwargs[key] = _build(sub, kwargs[key], f"{prefix}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{prefix}' section: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(f"unknown key '{key}'")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError("'seed' must be a non-negative integer")
            kwargs[key] = value
        elif key == "deterministic":
            if not isinstance(value, bool):
                raise ConfigError("'deterministic' must be true or false")
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        data = read_json(path)
    except FormatError as exc:
        raise ConfigError(str(exc)) from None
    return config_from_dict(data)
