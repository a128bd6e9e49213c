"""Run configuration: defaults, JSON file, environment and command-line values, in rising priority."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_count, check_exponent, check_N, check_positive
from .graph import GraphSpecError, MetricGraph, load_graph, tadpole_graph

ENV_PREFIX = "NLSGRAPH_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings of one run.

    Without ``graph`` the default graph is a tadpole with loop ``loop`` and
    half-line truncated at ``truncation``. Core edges are meshed with step
    ``h / core_refine``; all other edges with ``h``.
    """

    graph: str | None = None
    loop: float = 1.0
    truncation: float = 30.0
    p: float = 8.0
    mu: float = 1.0
    h: float = 1e-3
    core_refine: float = 25.0
    rho_steps: int = 11
    N: int = 4
    seed: int = 0
    tol: float = 1e-9
    out: str = "results"
    levels_h: float = 1e-2
    extra: dict = field(default_factory=dict, repr=False)

    @classmethod
    def fields(cls) -> dict:
        return {f.name: f for f in dataclasses.fields(cls) if f.name != "extra"}

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        values: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"config file {path}: expected a JSON object")
            unknown = set(data) - set(cls.fields())
            if unknown:
                raise ConfigError(f"config file {path}: unknown keys {sorted(unknown)}")
            values.update(data)
        values.update(cls._from_env(os.environ if env is None else env))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def _from_env(cls, env) -> dict:
        out = {}
        for name, f in cls.fields().items():
            raw = env.get(ENV_PREFIX + name.upper())
            if raw is None:
                continue
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            try:
                if kind.startswith("int"):
                    out[name] = int(raw)
                elif kind.startswith("float"):
                    out[name] = float(raw)
                else:
                    out[name] = raw
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX + name.upper()}={raw!r} is not a valid {kind}") from None
        return out

    def validate(self, supercritical: bool = False) -> "RunConfig":
        try:
            check_exponent(self.p, supercritical)
            for name in ("mu", "h", "truncation", "loop", "core_refine", "tol", "levels_h"):
                check_positive(getattr(self, name), name)
            check_count(self.rho_steps, "rho_steps", min_val=1)
            check_N(self.N)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def build_graph(self) -> MetricGraph:
        if self.graph is None:
            return tadpole_graph(self.loop, self.truncation)
        path = Path(self.graph)
        if not path.is_file():
            raise FileNotFoundError(f"graph file not found: {path}")
        try:
            return load_graph(path)
        except GraphSpecError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def rho_grid(self) -> list[float]:
        if self.rho_steps == 1:
            return [1.0]
        return [float(r) for r in np.linspace(0.5, 1.0, self.rho_steps)]

    def Ns(self) -> list[int]:
        return check_N(self.N)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.fields()}
