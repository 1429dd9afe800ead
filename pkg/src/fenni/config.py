"""Run configuration: JSON schema, defaults and combination checks."""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .errors import ConfigError

PROBLEMS = ("bar1d", "plate2d")
LOSSES = ("energy", "weak", "residual")
INTEGRATIONS = ("gauss", "trapezoid")
OPTIMIZERS = ("lbfgs", "adam")
MODES = ("fixed", "r", "rh", "multigrid")


@dataclass
class MeshConfig:
    """Generated mesh (``n_nodes`` for the bar, ``refine_level`` for the plate)
    or a Gmsh file in ``path``.  ``levels`` lists the multigrid sequence."""

    n_nodes: int = 41
    refine_level: int = 1
    path: str | None = None
    levels: list | None = None


@dataclass
class IntegrationConfig:
    kind: str = "gauss"
    n: int = 3


@dataclass
class OptimizerConfig:
    name: str = "lbfgs"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_evals: int = 25


@dataclass
class StopConfig:
    tol: float | None = None
    max_iter: int | None = None
    tol_abs: float | None = None
    gtol: float | None = None


@dataclass
class AdaptivityConfigSpec:
    t_delta_j: float = 0.1
    check_interval: int = 10
    max_splits: int = 1
    inversion_floor: float = 1e-3


@dataclass
class ProblemParams:
    """Material, geometry and boundary data; unused entries are ignored."""

    L: float = 10.0
    A: float = 1.0
    E: float = 175.0
    u_L: float = 5e-4
    x1: float = 2.5
    x2: float = 7.5
    width: float = 10.0
    height: float = 5.0
    hole_center: list = field(default_factory=lambda: [5.0, 2.5])
    hole_radius: float = 1.0
    lam: float = 1.25
    mu: float = 1.0
    u_left: list = field(default_factory=lambda: [0.0, 0.0])
    u_right: list = field(default_factory=lambda: [1.0, 0.0])
    reference_level: int = 4


@dataclass
class RunConfig:
    problem: str = "bar1d"
    params: ProblemParams = field(default_factory=ProblemParams)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    order: int = 1
    loss: str = "energy"
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mode: str = "fixed"
    multigrid_mode: str = "r"
    adaptivity: AdaptivityConfigSpec = field(default_factory=AdaptivityConfigSpec)
    stop: StopConfig = field(default_factory=StopConfig)
    init: float | None = None
    init_jitter: float = 0.0
    seed: int = 0
    output_dir: str = "out"

    def validate(self) -> "RunConfig":
        validate(self)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_NESTED = {
    "params": ProblemParams,
    "mesh": MeshConfig,
    "integration": IntegrationConfig,
    "optimizer": OptimizerConfig,
    "adaptivity": AdaptivityConfigSpec,
    "stop": StopConfig,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key) if cls is RunConfig else None
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    """Build and validate a config; missing keys take their defaults."""
    return validate(_build(RunConfig, data, "config"))


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(data)


def load(path) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(config: RunConfig) -> str:
    return config.to_json()


def _choice(value, allowed, name):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {value!r}")


def _positive_int(value, name):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{name} must be a positive integer")


def validate(cfg: RunConfig) -> RunConfig:
    """Check field values and the allowed combinations."""
    _choice(cfg.problem, PROBLEMS, "problem")
    _choice(cfg.loss, LOSSES, "loss")
    _choice(cfg.integration.kind, INTEGRATIONS, "integration.kind")
    _choice(cfg.optimizer.name, OPTIMIZERS, "optimizer.name")
    _choice(cfg.mode, MODES, "mode")
    _choice(cfg.multigrid_mode, ("fixed", "r"), "multigrid_mode")
    _positive_int(cfg.integration.n, "integration.n")
    if cfg.order not in (1, 2):
        raise ConfigError("order must be 1 or 2")
    is_1d = cfg.problem == "bar1d"
    if not is_1d:
        if cfg.integration.kind == "trapezoid":
            raise ConfigError("trapezoid integration is only available for 1D problems")
        if cfg.loss != "energy":
            raise ConfigError(f"the {cfg.loss} loss is only available for 1D problems")
        if cfg.order != 1:
            raise ConfigError("2D problems use linear triangles (order 1)")
        if cfg.integration.n not in (1, 3):
            raise ConfigError("triangle Gauss rules have 1 or 3 points")
    elif cfg.integration.kind == "gauss" and cfg.integration.n > 5:
        raise ConfigError("1D Gauss rules have 1 to 5 points")
    if cfg.mode == "rh":
        if cfg.integration.kind != "gauss":
            raise ConfigError("rh-adaptivity requires Gauss integration")
        if cfg.order != 1:
            raise ConfigError("rh-adaptivity requires linear elements")
    if cfg.loss == "weak" and cfg.integration.kind != "gauss":
        raise ConfigError("the weak loss requires Gauss integration")
    if cfg.loss == "residual":
        if cfg.order != 2:
            raise ConfigError("the residual loss needs quadratic displacement elements (order 2)")
        if cfg.integration.kind != "trapezoid":
            raise ConfigError("the residual loss is evaluated at trapezoid sample points")
        if cfg.mode in ("rh", "multigrid"):
            raise ConfigError("the residual loss supports fixed and r modes only")
    if cfg.mode == "multigrid":
        levels = cfg.mesh.levels
        if not levels or len(levels) < 2:
            raise ConfigError("multigrid needs mesh.levels with at least two entries")
        if any(not isinstance(v, int) or v < (2 if is_1d else 0) for v in levels):
            raise ConfigError("mesh.levels must hold node counts (1D) or refine levels (2D)")
        if list(levels) != sorted(set(levels)):
            raise ConfigError("mesh.levels must be strictly increasing")
    if is_1d and cfg.mesh.path is None and cfg.mesh.n_nodes < 2:
        raise ConfigError("mesh.n_nodes must be at least 2")
    if not is_1d and cfg.mesh.refine_level < 0:
        raise ConfigError("mesh.refine_level must be non-negative")
    a = cfg.adaptivity
    if not a.t_delta_j > 0:
        raise ConfigError("adaptivity.t_delta_j must be positive")
    if a.max_splits < 0:
        raise ConfigError("adaptivity.max_splits must be non-negative")
    _positive_int(a.check_interval, "adaptivity.check_interval")
    if not 0 <= a.inversion_floor < 1:
        raise ConfigError("adaptivity.inversion_floor must lie in [0, 1)")
    o = cfg.optimizer
    if not o.lr > 0:
        raise ConfigError("optimizer.lr must be positive")
    if not (0 < o.c1 < o.c2 < 1):
        raise ConfigError("optimizer line search needs 0 < c1 < c2 < 1")
    _positive_int(o.history, "optimizer.history")
    s = cfg.stop
    if s.max_iter is not None:
        _positive_int(s.max_iter, "stop.max_iter")
    for name in ("tol", "tol_abs", "gtol"):
        v = getattr(s, name)
        if v is not None and not v >= 0:
            raise ConfigError(f"stop.{name} must be non-negative")
    if cfg.init_jitter < 0:
        raise ConfigError("init_jitter must be non-negative")
    if len(cfg.params.u_left) != 2 or len(cfg.params.u_right) != 2:
        raise ConfigError("u_left and u_right need two components")
    return cfg


# study matrices -----------------------------------------------------------------
def _set_path(data: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown study axis {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown study axis {dotted!r}")
    node[keys[-1]] = value


def expand_study(data: dict) -> list[RunConfig]:
    """Cartesian product of ``matrix`` axes applied to the ``base`` config.

    ``{"base": {...}, "matrix": {"mesh.n_nodes": [10, 21], "optimizer.name": ["adam"]}}``
    gives one row per combination, in the order the axes are listed.
    """
    if not isinstance(data, dict) or "matrix" not in data:
        raise ConfigError("study config needs a 'matrix' object")
    unknown = sorted(set(data) - {"base", "matrix"})
    if unknown:
        raise ConfigError(f"unknown key(s) in study config: {', '.join(unknown)}")
    base = RunConfig().to_dict()
    for key, value in (data.get("base") or {}).items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key].update(value)
        else:
            base[key] = value
    matrix = data["matrix"]
    if not isinstance(matrix, dict) or not matrix or any(not v for v in matrix.values()):
        raise ConfigError("study matrix is empty")
    axes = list(matrix)
    rows = []
    for combo in itertools.product(*(matrix[a] for a in axes)):
        row = copy.deepcopy(base)
        for axis, value in zip(axes, combo):
            _set_path(row, axis, value)
        rows.append(row)
    return [from_dict(r) for r in rows]
