"""Experiment configuration: strict YAML schema and construction of model objects."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


class ConfigError(ValueError):
    """Invalid configuration; ``issues`` lists ``(location, line, message)``."""

    def __init__(self, issues):
        self.issues = list(issues)
        lines = []
        for loc, line, msg in self.issues:
            where = f"line {line}: " if line is not None else ""
            lines.append(f"{where}{loc or '<root>'}: {msg}")
        super().__init__("invalid configuration\n  " + "\n  ".join(lines))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    n_interior: int = Field(30, ge=3)
    n_steps: int = Field(60, ge=2)
    T: float = Field(1.0, gt=0)


class CoefficientsConfig(_Strict):
    a1: float = Field(1.0, gt=0)
    a2: float = Field(1.0, gt=0)
    b1: float = 0.0
    b2: float = 0.0
    c1: float = 0.0
    c2: float = 0.0


class ProfileConfig(_Strict):
    kind: Literal["constant", "decay", "piecewise"] = "constant"
    value: Optional[float] = None
    rate: Optional[float] = Field(None, ge=0)
    rate_over_sigma_minus: Optional[float] = Field(None, ge=0)
    scale: float = 1.0
    breaks: Optional[list[float]] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "decay" and (self.rate is None) == (self.rate_over_sigma_minus is None):
            raise ValueError("decay profile needs exactly one of rate, rate_over_sigma_minus")
        if self.kind == "piecewise":
            if self.breaks is None or self.values is None:
                raise ValueError("piecewise profile needs breaks and values")
            if len(self.values) != len(self.breaks) + 1:
                raise ValueError("piecewise profile needs len(values) == len(breaks) + 1")
        return self

    def as_dict(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class KernelConfig(_Strict):
    kind: Literal["zero", "gaussian", "constant", "table"] = "zero"
    C: float = 1.0
    d: float = 0.0
    k: float = Field(0.3, gt=0)
    lam: float = 1.0
    value: float = 1.0
    path: Optional[str] = None
    profile: ProfileConfig = Field(default_factory=ProfileConfig)

    @model_validator(mode="after")
    def _table_path(self):
        if self.kind == "table" and not self.path:
            raise ValueError("table kernel needs a path")
        return self


class KernelsConfig(_Strict):
    y: KernelConfig = Field(default_factory=KernelConfig)
    z: KernelConfig = Field(default_factory=KernelConfig)


class CouplingConfig(_Strict):
    name: Literal["zero", "linear", "tanh", "sin_scaled"] = "zero"
    params: dict[str, Union[float, bool]] = Field(default_factory=dict)


class ControlConfig(_Strict):
    omega: tuple[float, float] = (0.2, 0.8)
    two_controls: bool = False
    c_margin: float = Field(1e-6, gt=0)


class FieldConfig(_Strict):
    kind: Literal["zero", "sine", "bump", "random"] = "zero"
    amplitude: float = 1.0
    mode: int = Field(1, ge=1)
    center: float = 0.5
    width: float = Field(0.1, gt=0)


class InitialDataConfig(_Strict):
    y0: FieldConfig = Field(default_factory=lambda: FieldConfig(kind="sine"))
    z0: FieldConfig = Field(default_factory=FieldConfig)
    total_norm: Optional[float] = Field(None, ge=0)


class CarlemanConfig(_Strict):
    kappa: float = Field(2.0, gt=0)
    s: Optional[float] = Field(None, gt=0)
    deltabar: float = Field(1e-2, gt=0)
    refine: int = Field(4, ge=1)
    eta_margin: float = Field(1e-3, gt=0)


class HumConfig(_Strict):
    epsilon: float = Field(1e-6, gt=0)
    epsilons: list[float] = Field(default_factory=lambda: [10.0 ** -k for k in range(2, 9)])
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(2000, ge=1)

    @field_validator("epsilons")
    @classmethod
    def _decreasing(cls, v):
        if not v or any(e <= 0 for e in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("epsilons must be positive and strictly decreasing")
        return v


class FixedPointSection(_Strict):
    delta: float = Field(1e-2, gt=0)
    allow_large_data: bool = False
    max_outer_iterations: int = Field(30, ge=1)
    outer_tolerance: float = Field(1e-8, gt=0)
    epsilon: float = Field(1e-6, gt=0)
    epsilon_schedule: Optional[list[float]] = None
    start_from_zero: bool = False
    divergence_window: int = Field(5, ge=1)
    ball_factor: float = Field(10.0, gt=1)
    validation_factor: float = Field(10.0, gt=0)


class BoundaryConfig(_Strict):
    eps_ext: float = Field(0.25, gt=0)
    omega_bar: tuple[float, float] = (1.05, 1.20)
    semilinear: bool = False
    epsilon: float = Field(1e-6, gt=0)


class SimulateConfig(_Strict):
    semilinear: bool = False
    control: Literal["none", "hum"] = "none"
    reference: Literal["none", "heat_mode", "manufactured"] = "none"


class ExperimentConfig(_Strict):
    grid: GridConfig = Field(default_factory=GridConfig)
    coefficients: CoefficientsConfig = Field(default_factory=CoefficientsConfig)
    kernels: KernelsConfig = Field(default_factory=KernelsConfig)
    coupling: CouplingConfig = Field(default_factory=CouplingConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)
    initial_data: InitialDataConfig = Field(default_factory=InitialDataConfig)
    carleman: CarlemanConfig = Field(default_factory=CarlemanConfig)
    hum: HumConfig = Field(default_factory=HumConfig)
    fixed_point: FixedPointSection = Field(default_factory=FixedPointSection)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    seed: int = 0
    output_dir: str = "out"

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths of a composed YAML document to 1-based line numbers."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            p = path + (key.value,)
            out[p] = key.start_mark.line + 1
            _line_index(value, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            p = path + (i,)
            out[p] = value.start_mark.line + 1
            _line_index(value, p, out)
    return out


def _nearest_line(lines: dict, loc: tuple) -> Optional[int]:
    loc = tuple(loc)
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError([(source, mark.line + 1 if mark else None, str(exc))]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([(source, 1, "top level must be a mapping")])
    lines = _line_index(node) if node is not None else {}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        issues = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
            issues.append((".".join(str(p) for p in loc), _nearest_line(lines, loc), err["msg"]))
        raise ConfigError(issues) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(str(path), None, str(exc))]) from None
    return parse_config(text, str(path))


def json_schema() -> dict:
    """JSON Schema of the configuration file (YAML is validated as the equivalent JSON)."""
    return ExperimentConfig.model_json_schema()


def sample_field(spec: FieldConfig, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "zero":
        return np.zeros_like(x)
    if spec.kind == "sine":
        return spec.amplitude * np.sin(spec.mode * np.pi * x)
    if spec.kind == "bump":
        return spec.amplitude * np.exp(-0.5 * ((x - spec.center) / spec.width) ** 2) * np.sin(np.pi * x)
    return spec.amplitude * rng.standard_normal(x.shape) * np.sin(np.pi * x)


def build_initial_data(cfg: ExperimentConfig, grid) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    y0 = sample_field(cfg.initial_data.y0, grid.x, rng)
    z0 = sample_field(cfg.initial_data.z0, grid.x, rng)
    target = cfg.initial_data.total_norm
    if target is not None:
        size = grid.l2_norm(y0) + grid.l2_norm(z0)
        if size == 0 and target > 0:
            raise ConfigError([("initial_data.total_norm", None,
                                "cannot rescale zero data to a positive norm")])
        if size > 0:
            y0, z0 = y0 * (target / size), z0 * (target / size)
    return y0, z0


def model_dump_for_manifest(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"n_interior": cfg.grid.n_interior, "n_steps": cfg.grid.n_steps, "T": cfg.grid.T}
