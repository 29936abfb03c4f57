"""Scenario configuration files (JSON, schema_version 1).

Configs reference built-in systems by registry name; formulas are never
embedded in config files, which keeps runs auditable.  Validation is strict:
unknown keys, missing registry names, and out-of-range radii are rejected
before any output is produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .manifolds import GeometryError, Manifold, ManifoldPoint, manifold_from_name
from .systems import SystemSpec, attach_disturbance, available_systems, make_system

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Scenario configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class DeltaPolicy:
    """Horizon policy: an explicit delta or an auto-chosen decay margin."""

    mode: str                    # "explicit" | "auto"
    value: float | None = None   # explicit horizon
    target: float | None = None  # auto: target K' in (0, 1)


@dataclass(frozen=True)
class GridConfig:
    n_points: int
    radius: float
    t0_list: tuple[float, ...]


@dataclass(frozen=True)
class DisturbanceConfig:
    profile: str
    amplitude: float
    bound: float
    frequency: float = 1.0
    direction: tuple[float, ...] | None = None


@dataclass(frozen=True)
class MasseraConfig:
    t_max: float
    fit_horizon: float
    tail_tol: float = 1e-8


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    manifold: Manifold
    system_name: str
    system_params: dict
    equilibrium: ManifoldPoint
    delta: DeltaPolicy
    p: float
    grid: GridConfig
    seed: int
    step: float
    fit_horizon: float
    envelope_horizon: float = 3.0
    massera: MasseraConfig | None = None
    disturbance: DisturbanceConfig | None = None
    iss_horizons: tuple[float, ...] = (8.0, 12.0)

    def build_system_unforced(self) -> SystemSpec:
        return make_system(self.system_name, self.manifold,
                           self.equilibrium.coords, **self.system_params)

    def build_system(self) -> SystemSpec:
        spec = self.build_system_unforced()
        if self.disturbance is not None:
            d = self.disturbance
            spec = attach_disturbance(spec, d.profile, d.amplitude, d.bound,
                                      d.frequency, d.direction)
        return spec


def _require_keys(data: dict, allowed: set[str], context: str):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


def _get(data: dict, key: str, types, context: str, default=None, required=False):
    if key not in data:
        if required:
            raise ConfigError(f"missing required {context} key: {key!r}")
        return default
    value = data[key]
    if not isinstance(value, types):
        raise ConfigError(f"{context} key {key!r} has wrong type {type(value).__name__}")
    return value


def parse_scenario(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario config must be a JSON object")
    _require_keys(data, {
        "schema_version", "manifold", "system", "equilibrium", "delta", "p",
        "grids", "seed", "step", "fit_horizon", "envelope_horizon", "massera",
        "disturbance", "iss_horizons",
    }, "top-level")
    version = _get(data, "schema_version", int, "top-level", required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")

    try:
        manifold = manifold_from_name(_get(data, "manifold", str, "top-level", required=True))
    except GeometryError as err:
        raise ConfigError(str(err)) from err

    system = _get(data, "system", dict, "top-level", required=True)
    _require_keys(system, {"name", "params"}, "system")
    system_name = _get(system, "name", str, "system", required=True)
    if system_name not in available_systems():
        raise ConfigError(
            f"unknown system {system_name!r}; available: {available_systems()}")
    system_params = _get(system, "params", dict, "system", default={})

    eq_raw = _get(data, "equilibrium", list, "top-level", required=True)
    try:
        equilibrium = manifold.point(eq_raw)
    except (GeometryError, ValueError) as err:
        raise ConfigError(f"bad equilibrium coordinates: {err}") from err

    delta_raw = _get(data, "delta", dict, "top-level", required=True)
    _require_keys(delta_raw, {"policy", "value", "target"}, "delta")
    policy = _get(delta_raw, "policy", str, "delta", required=True)
    if policy == "explicit":
        value = _get(delta_raw, "value", (int, float), "delta", required=True)
        if value <= 0:
            raise ConfigError("explicit delta must be positive")
        delta = DeltaPolicy("explicit", value=float(value))
    elif policy == "auto":
        target = _get(delta_raw, "target", (int, float), "delta", required=True)
        if not 0.0 < target < 1.0:
            raise ConfigError("auto delta target must lie in (0, 1)")
        delta = DeltaPolicy("auto", target=float(target))
    else:
        raise ConfigError(f"delta policy must be 'explicit' or 'auto', got {policy!r}")

    p = float(_get(data, "p", (int, float), "top-level", default=2.0))
    if p < 1.0:
        raise ConfigError(f"power p must be >= 1, got {p}")

    grids = _get(data, "grids", dict, "top-level", required=True)
    _require_keys(grids, {"n_points", "radius", "t0_list"}, "grids")
    n_points = _get(grids, "n_points", int, "grids", required=True)
    radius = float(_get(grids, "radius", (int, float), "grids", required=True))
    t0_list = tuple(float(t) for t in _get(grids, "t0_list", list, "grids",
                                           default=[0.0, 1.0, math.e, 10.0]))
    if n_points < 1 or radius <= 0 or not t0_list:
        raise ConfigError("grids need n_points >= 1, radius > 0, nonempty t0_list")
    if radius >= manifold.cut_locus_radius:
        raise ConfigError(
            f"grid radius {radius} reaches the cut-locus bound of {manifold.name}")

    seed = _get(data, "seed", int, "top-level", default=0)
    step = float(_get(data, "step", (int, float), "top-level", default=1e-2))
    if step <= 0:
        raise ConfigError("step must be positive")
    fit_horizon = float(_get(data, "fit_horizon", (int, float), "top-level", default=6.0))
    if fit_horizon <= 0:
        raise ConfigError("fit_horizon must be positive")
    envelope_horizon = float(_get(data, "envelope_horizon", (int, float),
                                  "top-level", default=3.0))

    massera = None
    if data.get("massera") is not None:
        mdata = _get(data, "massera", dict, "top-level")
        _require_keys(mdata, {"t_max", "fit_horizon", "tail_tol"}, "massera")
        massera = MasseraConfig(
            t_max=float(_get(mdata, "t_max", (int, float), "massera", required=True)),
            fit_horizon=float(_get(mdata, "fit_horizon", (int, float), "massera", required=True)),
            tail_tol=float(_get(mdata, "tail_tol", (int, float), "massera", default=1e-8)),
        )
        if massera.t_max <= 0 or massera.fit_horizon < massera.t_max:
            raise ConfigError("massera needs 0 < t_max <= fit_horizon")

    disturbance = None
    if data.get("disturbance") is not None:
        ddata = _get(data, "disturbance", dict, "top-level")
        _require_keys(ddata, {"profile", "amplitude", "bound", "frequency",
                              "direction"}, "disturbance")
        amplitude = float(_get(ddata, "amplitude", (int, float), "disturbance", required=True))
        if amplitude < 0:
            raise ConfigError("disturbance amplitude must be nonnegative")
        bound = float(_get(ddata, "bound", (int, float), "disturbance", default=amplitude))
        direction = ddata.get("direction")
        disturbance = DisturbanceConfig(
            profile=_get(ddata, "profile", str, "disturbance", required=True),
            amplitude=amplitude,
            bound=bound,
            frequency=float(_get(ddata, "frequency", (int, float), "disturbance", default=1.0)),
            direction=tuple(direction) if direction is not None else None,
        )

    iss_horizons = tuple(float(t) for t in data.get("iss_horizons", [8.0, 12.0]))
    if any(t <= 0 for t in iss_horizons) or not iss_horizons:
        raise ConfigError("iss_horizons must be positive")

    return ScenarioConfig(manifold, system_name, system_params, equilibrium,
                          delta, p, GridConfig(n_points, radius, t0_list), seed,
                          step, fit_horizon, envelope_horizon, massera,
                          disturbance, iss_horizons)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return parse_scenario(data)
