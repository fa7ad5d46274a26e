"""Run configuration: nested dataclasses with a YAML round-trip."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .core import ConfigError, ControlConfig, EnvParams
from .trainer import TrainerConfig


@dataclass(frozen=True)
class EstimationConfig:
    n_paths: int = 100
    years: float = 20.0
    lookback: int = 252
    eta_u: float = 0.15
    em_iters: int = 200
    em_tol: float = 1e-8


@dataclass(frozen=True)
class FdConfig:
    grid_cells: int = 10_000
    targets: tuple = (1.2, 1.6)
    relax: float = 0.01
    tol: float = 1e-12
    max_iter: int = 100_000
    init: tuple = (0.5, 0.5)
    stencil: str = "upwind"
    sweep_caps: tuple = (0.6, 1.0, 3.0)
    sweep_sigmas: tuple = (0.3, 0.8)
    x_max: float = 5.0
    x_points: int = 51
    p_points: int = 51


@dataclass(frozen=True)
class SimulateConfig:
    n_paths: int = 1
    years: float = 10.0
    dividend: str = "none"          # "none" pays nothing, "cap" pays at rate cap_a


@dataclass(frozen=True)
class EvalConfig:
    n_paths: int = 10_000
    chunk: int = 1000


@dataclass(frozen=True)
class RunConfig:
    env: EnvParams = field(default_factory=EnvParams)
    control: ControlConfig = field(default_factory=ControlConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    fd: FdConfig = field(default_factory=FdConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        return _build(cls, d or {})

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = _NESTED.get(ftype) if isinstance(ftype, str) else None
        if sub is not None:
            kw[name] = _build(sub, value)
        elif isinstance(value, list):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_NESTED = {"EnvParams": EnvParams, "ControlConfig": ControlConfig, "TrainerConfig": TrainerConfig,
           "EstimationConfig": EstimationConfig, "FdConfig": FdConfig,
           "SimulateConfig": SimulateConfig, "EvalConfig": EvalConfig}
