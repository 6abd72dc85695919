"""Scenario configuration: TOML in, validated model out, canonical TOML back.

Unknown keys anywhere are errors.  ``dump`` writes every field, so
``parse(dump(cfg)) == cfg`` and two configs that differ only in omitted
defaults serialize identically.  The README documents the schema.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Union

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coeffs import CONTROLS, DRIVERS, SDES, example_control, example_driver, example_sde, linear_sde, lq_problem

MODES = ("simulate-sde", "solve-bsde", "optimize", "mollify-report", "check")

ParamValue = Union[bool, int, float, str, list[float]]


class ConfigError(ValueError):
    """Configuration failed to parse or validate."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Section):
    T: float = Field(1.0, gt=0)
    M: int = Field(50, ge=1)


class ParticlesConfig(_Section):
    N: int = Field(10_000, ge=100)
    antithetic: bool = False


class SolverConfig(_Section):
    tol_picard: float = Field(1e-8, gt=0)
    tol_law: float = Field(1e-6, gt=0)
    tol_opt: float = Field(1e-3, gt=0)
    max_picard: int = Field(50, ge=1)
    max_law: int = Field(10, ge=1)
    max_iters: int = Field(50, ge=0)
    degree: int = Field(3, ge=0, le=6)
    eta0: float = Field(1.0, gt=0)
    fresh_noise: bool = True


DEFAULT_PROBLEM = {
    "simulate-sde": "linear",
    "solve-bsde": "piecewise_l",
    "optimize": "lq",
    "mollify-report": "sqrt_cap",
    "check": "lq",
}


class ProblemConfig(_Section):
    key: str = "lq"
    params: dict[str, ParamValue] = Field(default_factory=dict)


class SdeConfig(_Section):
    x0: float = 1.0
    paths: int = Field(8, ge=0)


class BsdeConfig(_Section):
    terminal: Literal["constant", "brownian"] = "constant"
    value: float = 1.0
    V0: list[float] = Field(default_factory=lambda: [0.0])

    @field_validator("V0")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("V0 needs at least one Picard initialization")
        return v


class OptimizeConfig(_Section):
    u0: float = 0.0


class MollifyConfig(_Section):
    ns: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, 256])
    Q: int = Field(32, ge=8)
    y: list[float] = Field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 1.5, 2.0])
    mean: list[float] = Field(default_factory=lambda: [0.0])
    n_pairs: int = Field(200, ge=100)

    @field_validator("ns")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) < 1:
            raise ValueError("ns must be a non-empty list of integers >= 1")
        return v


class CheckConfig(_Section):
    only: list[str] = Field(default_factory=list)

    @field_validator("only")
    @classmethod
    def _known(cls, v):
        from .checks import CHECKS

        unknown = [n for n in v if n not in CHECKS]
        if unknown:
            raise ValueError(f"unknown checks {unknown}; choose from {sorted(CHECKS)}")
        return v


class ScenarioConfig(_Section):
    mode: Literal["simulate-sde", "solve-bsde", "optimize", "mollify-report", "check"]
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    out: str = "out"
    grid: GridConfig = Field(default_factory=GridConfig)
    particles: ParticlesConfig = Field(default_factory=ParticlesConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    sde: SdeConfig = Field(default_factory=SdeConfig)
    bsde: BsdeConfig = Field(default_factory=BsdeConfig)
    optimize: OptimizeConfig = Field(default_factory=OptimizeConfig)
    mollify: MollifyConfig = Field(default_factory=MollifyConfig)
    check: CheckConfig = Field(default_factory=CheckConfig)

    @model_validator(mode="before")
    @classmethod
    def _default_problem(cls, data):
        if isinstance(data, dict) and data.get("mode") in DEFAULT_PROBLEM:
            problem = data.get("problem")
            if problem is None:
                data = {**data, "problem": {"key": DEFAULT_PROBLEM[data["mode"]]}}
            elif isinstance(problem, dict) and "key" not in problem:
                data = {**data, "problem": {**problem, "key": DEFAULT_PROBLEM[data["mode"]]}}
        return data

    @model_validator(mode="after")
    def _problem_fits_mode(self):
        problem = build_problem(self)  # raises ValueError on unknown keys or parameters
        if self.mode == "solve-bsde":
            a2 = problem.constants.alpha2
            dt = self.grid.T / self.grid.M
            if not dt * a2 < 1.0:
                raise ValueError(f"dt * alpha2 = {dt * a2:g} must be < 1; increase grid.M")
        if self.mode == "optimize":
            u0 = self.optimize.u0
            if np.any(u0 < problem.u_lo) or np.any(u0 > problem.u_hi):
                raise ValueError(f"optimize.u0 = {u0} lies outside the control box [{problem.u_lo}, {problem.u_hi}]")
        return self


def build_problem(cfg: ScenarioConfig):
    """Instantiate the coefficient object that ``cfg.mode`` and ``cfg.problem`` select."""
    key, params = cfg.problem.key, dict(cfg.problem.params)
    try:
        if cfg.mode == "simulate-sde":
            if key == "linear":
                return linear_sde(**params)
            if key in SDES:
                return example_sde(key, **params)
            raise ValueError(f"unknown SDE {key!r}; choose from {['linear', *SDES]}")
        if cfg.mode in ("solve-bsde", "mollify-report"):
            if key in DRIVERS:
                return example_driver(key, **params)
            raise ValueError(f"unknown driver {key!r}; choose from {list(DRIVERS)}")
        if cfg.mode == "optimize":
            if "T" in params:
                raise ValueError("the horizon comes from grid.T, not problem.params")
            if "u_box" in params:
                params["u_box"] = tuple(params["u_box"])
            if key == "lq":
                return lq_problem(T=cfg.grid.T, **params)
            if key in CONTROLS:
                return example_control(key, T=cfg.grid.T, **params)
            raise ValueError(f"unknown control problem {key!r}; choose from {['lq', *CONTROLS]}")
        return None
    except TypeError as exc:
        raise ValueError(f"bad parameters for problem {key!r}: {exc}") from None


def _format_error(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def parse(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from None
    return from_dict(data)


def load(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse(text)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(v[k]) for k in sorted(v)}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg.model_dump(mode="python"))


def dump(cfg: ScenarioConfig) -> str:
    """Canonical TOML: every field present, keys sorted."""
    return tomli_w.dumps(to_dict(cfg))


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Re-validated copy with top-level fields replaced (``None`` values are ignored)."""
    data = to_dict(cfg)
    data.update({k: v for k, v in changes.items() if v is not None})
    return from_dict(data)
