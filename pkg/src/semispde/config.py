"""Experiment configuration: a strict JSON schema validated with pydantic."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

COMMANDS = (
    "simulate",
    "observe",
    "reconstruct",
    "verify-identities",
    "verify-carleman",
    "verify-energy",
    "sobolev",
    "stability-source",
    "stability-cauchy",
    "sweep",
)

PRESETS = ("heat", "variable", "ito", "source", "cauchy")


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SineField(Strict):
    """``offset + amplitude * prod_i sin(k_i pi x_i + phase_i) * (1 + time_amplitude cos(omega t))``."""

    fn: Literal["sine"] = "sine"
    offset: float = 0.0
    amplitude: float = 1.0
    k: list[float] = Field(default_factory=lambda: [1.0])
    phase: list[float] = Field(default_factory=lambda: [0.0])
    time_amplitude: float = 0.0
    omega: float = 0.0


class Table(Strict):
    """Values on the primal mesh in enumeration order, constant in time."""

    table: list[float]


Coefficient = Union[float, SineField, Table, None]


class MeshConfig(Strict):
    n: Union[int, list[int]] = 1
    N: int | None = Field(default=None, ge=2)
    N_sweep: list[int] | None = None

    @field_validator("n")
    @classmethod
    def _dims(cls, v):
        dims = v if isinstance(v, list) else [v]
        if not dims or any(d not in (1, 2, 3) for d in dims):
            raise ValueError("dimensions must be 1, 2 or 3")
        return v

    @field_validator("N_sweep")
    @classmethod
    def _sweep(cls, v):
        if v is not None:
            if not v:
                raise ValueError("sweep must be nonempty")
            if any(N < 2 for N in v):
                raise ValueError("every N must be at least 2")
        return v

    @model_validator(mode="after")
    def _exclusive(self):
        if self.N is not None and self.N_sweep is not None:
            raise ValueError("give either N or N_sweep, not both")
        if self.N is None and self.N_sweep is None:
            raise ValueError("one of N or N_sweep is required")
        return self

    @property
    def dims(self) -> list[int]:
        return self.n if isinstance(self.n, list) else [self.n]

    @property
    def levels(self) -> list[int]:
        return list(self.N_sweep) if self.N_sweep is not None else [self.N]


class TimeConfig(Strict):
    T: float = Field(default=0.5, gt=0)
    M: int | None = Field(default=None, ge=1)
    dt_factor: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _exclusive(self):
        if self.M is not None and self.dt_factor is not None:
            raise ValueError("give either M or dt_factor, not both")
        return self

    def steps(self, N: int) -> int:
        """``M`` if given, else ``dt = dt_factor h^2`` (default factor 1/4)."""
        if self.M is not None:
            return self.M
        h = 1.0 / (N + 1)
        factor = 0.25 if self.dt_factor is None else self.dt_factor
        return max(1, math.ceil(self.T / (factor * h * h) - 1e-9))


class ProblemConfig(Strict):
    preset: Literal["heat", "variable", "ito", "source", "cauchy"] | None = "heat"
    gamma: Coefficient = None
    a1: list[Coefficient] | None = None
    a2: Coefficient = None
    a3: Coefficient = None
    f: Coefficient = None
    g: Coefficient = None
    xi: Coefficient = None
    w0: Coefficient = None
    x_star: list[float] | None = None


class WeightsConfig(Strict):
    x_star: list[float] | None = None
    lam: float = Field(default=1.0, ge=1)
    tau: float | None = Field(default=None, ge=1)
    tau_sweep: list[float] | None = None
    tau_h: float | None = Field(default=None, gt=0)
    beta: float = Field(default=1.0, gt=0)
    t0: float | None = None

    @model_validator(mode="after")
    def _exclusive(self):
        given = [v is not None for v in (self.tau, self.tau_sweep, self.tau_h)]
        if sum(given) > 1:
            raise ValueError("give at most one of tau, tau_sweep, tau_h")
        if self.tau_sweep is not None and (not self.tau_sweep or min(self.tau_sweep) < 1):
            raise ValueError("tau_sweep must be nonempty with every tau >= 1")
        return self

    def taus(self, N: int) -> list[float]:
        if self.tau_sweep is not None:
            return list(self.tau_sweep)
        if self.tau_h is not None:
            return [self.tau_h * (N + 1)]
        return [1.0 if self.tau is None else self.tau]


class MCConfig(Strict):
    n_paths: int = Field(default=200, ge=1)
    seed: int | None = Field(default=None, ge=0, lt=2**64)
    chunk: int = Field(default=50, ge=1)


class OutputConfig(Strict):
    directory: str = "out"
    formats: list[Literal["json", "csv", "png", "psgf"]] = Field(default_factory=lambda: ["json", "csv", "png"])


class OptionsConfig(Strict):
    """Command-specific knobs; each command reads the ones it needs."""

    solver: Literal["cg", "direct"] = "cg"
    kind: Literal["lambda1", "lambda2"] = "lambda1"
    alpha: list[float] = Field(default_factory=lambda: [1e-4, 1e-6, 1e-8])
    basis: Literal["profile", "field"] = "profile"
    pairs: int = Field(default=10, ge=1)
    perturbations: int = Field(default=8, ge=1, le=8)
    subdomain: tuple[float, float] = (0.25, 0.75)
    eps: float = Field(default=0.1, gt=0)
    samples: int = Field(default=50, ge=1)
    lambdas: list[float] = Field(default_factory=lambda: [1.0, 2.0])
    instances: int = Field(default=5, ge=1)
    boundary_data: bool = False
    p: float = 2.0
    p_star: float = 4.0
    decay: float = 3.0

    @field_validator("alpha")
    @classmethod
    def _positive(cls, v):
        if not v or any(a <= 0 for a in v):
            raise ValueError("alpha values must be positive")
        return v


class ExperimentConfig(Strict):
    """A full run description; ``digest`` ignores where the output goes."""

    command: Literal[
        "simulate",
        "observe",
        "reconstruct",
        "verify-identities",
        "verify-carleman",
        "verify-energy",
        "sobolev",
        "stability-source",
        "stability-cauchy",
        "sweep",
    ]
    mesh: MeshConfig
    time: TimeConfig = TimeConfig()
    problem: ProblemConfig = ProblemConfig()
    weights: WeightsConfig = WeightsConfig()
    mc: MCConfig = MCConfig()
    output: OutputConfig = OutputConfig()
    options: OptionsConfig = OptionsConfig()
    sweep: "SweepConfig | None" = None

    @model_validator(mode="after")
    def _randomness(self):
        if self.command in RANDOM_COMMANDS and self.mc.seed is None:
            raise ValueError(f"command {self.command!r} uses randomness and needs mc.seed")
        if self.command == "sweep" and self.sweep is None:
            raise ValueError("command 'sweep' needs a sweep section")
        return self

    def digest(self) -> str:
        data = self.model_dump(mode="json")
        data["output"].pop("directory")
        return hashlib.sha256(canonical_json(data).encode()).hexdigest()


class SweepConfig(Strict):
    command: str
    parameter: str
    values: list

    @field_validator("command")
    @classmethod
    def _known(cls, v):
        if v not in COMMANDS or v == "sweep":
            raise ValueError(f"cannot sweep command {v!r}")
        return v

    @field_validator("values")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("sweep values must be nonempty")
        return v


ExperimentConfig.model_rebuild()

RANDOM_COMMANDS = {
    "simulate",
    "observe",
    "reconstruct",
    "verify-identities",
    "verify-carleman",
    "sobolev",
    "stability-source",
    "stability-cauchy",
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{where}: {e['msg']}")
    return out


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError([f"{path}: {err.strerror}"]) from None
    except json.JSONDecodeError as err:
        raise ConfigError([f"{path}: invalid JSON ({err.msg} at line {err.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return parse_config(data)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    data = cfg.model_dump(mode="json")
    if seed is not None:
        data["mc"]["seed"] = seed
    if out is not None:
        data["output"]["directory"] = out
    return parse_config(data)


def set_path(data: dict, dotted: str, value) -> dict:
    """Copy of ``data`` with the dotted key replaced."""
    data = json.loads(json.dumps(data))
    node = data
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value
    return data
