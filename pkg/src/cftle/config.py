"""Run configuration: one strict JSON document.

Unknown keys are rejected with the offending path so typos fail fast
instead of silently running defaults. Every leaf is validated both here
(type, rough range) and again by the owning dataclass (domain invariants);
errors surface as ConfigError carrying the config path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .flowfield import make_flow
from .grids import DomainBox, GridSpec
from .integrate import StepSpec
from .ocp import (ActuationBounds, CostWeights, GoalSpec, HorizonSpec,
                  SolverOptions)


class ConfigError(Exception):
    pass


_REQUIRED = object()


class _Block:
    """One JSON object being consumed key by key."""

    def __init__(self, raw, where: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
        self.raw = dict(raw)
        self.where = where

    def take(self, key: str, kind: str, default=_REQUIRED):
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"{self.where}: missing required key '{key}'")
            return default
        value = self.raw.pop(key)
        return self._check(key, value, kind)

    def _check(self, key, value, kind):
        where = f"{self.where}.{key}"
        if kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}: expected a number, got {value!r}")
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}: expected an integer, got {value!r}")
            return value
        if kind == "bool":
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: expected true/false, got {value!r}")
            return value
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(f"{where}: expected a string, got {value!r}")
            return value
        if kind == "list":
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list, got {value!r}")
            return value
        if kind == "obj":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object, got {value!r}")
            return value
        if kind == "number?":
            if value is None:
                return None
            return self._check(key, value, "number")
        if kind == "str?":
            if value is None:
                return None
            return self._check(key, value, "str")
        raise AssertionError(kind)

    def sub(self, key: str) -> "_Block":
        return _Block(self.take(key, "obj", {}), f"{self.where}.{key}")

    def close(self) -> None:
        if self.raw:
            stray = sorted(self.raw)[0]
            raise ConfigError(f"{self.where}: unknown key '{stray}'")


def _point(value, where: str) -> tuple[float, float]:
    if (not isinstance(value, list) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
        raise ConfigError(f"{where}: expected [x, y] numbers, got {value!r}")
    return float(value[0]), float(value[1])


@dataclass
class RunConfig:
    flow_name: str
    flow_params: dict
    domain: DomainBox
    grid_nx: int
    grid_ny: int
    t0: float
    t_a: float
    dt: float
    scheme: str
    backward: bool
    q: float
    r: float
    t_h: float
    ocp_dt: float
    goal: tuple
    u_max: float
    tol: float
    max_iterations: int
    step_rule: str
    policy_nx: int
    policy_ny: int
    policy_t_start: float
    dt_policy: float
    n_times: int
    periodic: bool
    time_interp: str
    render_enabled: bool
    render_vmin: float | None
    render_vmax: float | None
    render_ridge_percentile: float | None
    ridge_percentile: float
    ridge_write_mask: bool
    sweep_parameter: str | None
    sweep_values: list
    diag: dict = dataclass_field(default_factory=dict)
    patches: dict = dataclass_field(default_factory=dict)

    # constructors for the domain objects; ValueError -> ConfigError with path
    def flow(self):
        return _wrap("config.flow", make_flow, self.flow_name, self.flow_params)

    def ftle_grid(self) -> GridSpec:
        return _wrap("config.grid", GridSpec, self.domain, self.grid_nx, self.grid_ny)

    def step_spec(self) -> StepSpec:
        return _wrap("config.times", StepSpec, self.dt, self.scheme)

    def weights(self) -> CostWeights:
        return _wrap("config.ocp", CostWeights, self.q, self.r)

    def goal_spec(self) -> GoalSpec:
        return _wrap("config.ocp.goal", GoalSpec, self.goal[0], self.goal[1])

    def horizon(self) -> HorizonSpec:
        return _wrap("config.ocp", HorizonSpec, self.t_h, self.ocp_dt)

    def bounds(self) -> ActuationBounds:
        return _wrap("config.ocp.u_max", ActuationBounds, self.u_max)

    def solver_options(self) -> SolverOptions:
        return _wrap("config.ocp", SolverOptions, tol=self.tol,
                     max_iterations=self.max_iterations, step_rule=self.step_rule)

    def policy_grid(self) -> GridSpec:
        return _wrap("config.policy", GridSpec, self.domain, self.policy_nx, self.policy_ny)

    def to_dict(self) -> dict:
        """Fully resolved config (defaults included); used for hashing."""
        return {
            "flow": {"name": self.flow_name, "params": self.flow_params},
            "domain": self.domain.to_dict(),
            "grid": {"nx": self.grid_nx, "ny": self.grid_ny},
            "times": {"t0": self.t0, "t_a": self.t_a, "dt": self.dt,
                      "scheme": self.scheme, "backward": self.backward},
            "ocp": {"q": self.q, "r": self.r, "t_h": self.t_h, "dt": self.ocp_dt,
                    "goal": list(self.goal), "u_max": self.u_max, "tol": self.tol,
                    "max_iterations": self.max_iterations, "step_rule": self.step_rule},
            "policy": {"nx": self.policy_nx, "ny": self.policy_ny,
                       "t_start": self.policy_t_start, "dt_policy": self.dt_policy,
                       "n_times": self.n_times, "periodic": self.periodic,
                       "time_interp": self.time_interp},
            "render": {"enabled": self.render_enabled, "vmin": self.render_vmin,
                       "vmax": self.render_vmax,
                       "ridge_percentile": self.render_ridge_percentile},
            "ridge": {"percentile": self.ridge_percentile,
                      "write_mask": self.ridge_write_mask},
            "sweep": {"parameter": self.sweep_parameter, "values": self.sweep_values},
            "diagnostics": self.diag,
            "patches": self.patches,
        }


def _wrap(where, ctor, *args, **kwargs):
    try:
        return ctor(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    top = _Block(raw, "config")

    flow = top.sub("flow")
    flow_name = flow.take("name", "str", "double_gyre")
    flow_params = flow.take("params", "obj", {})
    flow.close()

    dom = top.sub("domain")
    domain = _wrap("config.domain", DomainBox,
                   dom.take("x_min", "number", 0.0), dom.take("x_max", "number", 2.0),
                   dom.take("y_min", "number", 0.0), dom.take("y_max", "number", 1.0))
    dom.close()

    grid = top.sub("grid")
    grid_nx = grid.take("nx", "int", 401)
    grid_ny = grid.take("ny", "int", 201)
    grid.close()

    times = top.sub("times")
    t0 = times.take("t0", "number", 0.0)
    t_a = times.take("t_a", "number", 15.0)
    dt = times.take("dt", "number", 0.1)
    scheme = times.take("scheme", "str", "rk4")
    backward = times.take("backward", "bool", False)
    times.close()
    if t_a == 0:
        raise ConfigError("config.times.t_a: advection time must be nonzero")

    ocp = top.sub("ocp")
    q = ocp.take("q", "number", 1.0)
    r = ocp.take("r", "number", 80.0)
    t_h = ocp.take("t_h", "number", 3.0)
    ocp_dt = ocp.take("dt", "number", 0.1)
    goal = _point(ocp.take("goal", "list", [0.5, 0.5]), "config.ocp.goal")
    u_max = ocp.take("u_max", "number", 0.1)
    tol = ocp.take("tol", "number", 1e-6)
    max_iterations = ocp.take("max_iterations", "int", 2000)
    step_rule = ocp.take("step_rule", "str", "spectral")
    ocp.close()

    pol = top.sub("policy")
    policy_nx = pol.take("nx", "int", 41)
    policy_ny = pol.take("ny", "int", 21)
    policy_t_start = pol.take("t_start", "number", 0.0)
    dt_policy = pol.take("dt_policy", "number", 0.1)
    n_times = pol.take("n_times", "int", 101)
    periodic = pol.take("periodic", "bool", True)
    time_interp = pol.take("time_interp", "str", "linear")
    pol.close()
    if n_times < 1 or dt_policy <= 0:
        raise ConfigError("config.policy: needs n_times >= 1 and dt_policy > 0")
    if time_interp not in ("linear", "nearest"):
        raise ConfigError(f"config.policy.time_interp: must be 'linear' or 'nearest', "
                          f"got '{time_interp}'")

    render = top.sub("render")
    render_enabled = render.take("enabled", "bool", True)
    render_vmin = render.take("vmin", "number?", None)
    render_vmax = render.take("vmax", "number?", None)
    render_ridge = render.take("ridge_percentile", "number?", None)
    render.close()

    ridge = top.sub("ridge")
    ridge_percentile = ridge.take("percentile", "number", 0.95)
    ridge_write_mask = ridge.take("write_mask", "bool", False)
    ridge.close()
    if not (0.0 < ridge_percentile < 1.0):
        raise ConfigError(f"config.ridge.percentile: must be in (0, 1), got {ridge_percentile}")

    sweep = top.sub("sweep")
    sweep_parameter = sweep.take("parameter", "str?", None)
    sweep_values = sweep.take("values", "list", [])
    sweep.close()
    if sweep_parameter is not None and sweep_parameter not in ("rq", "t_h", "goal"):
        raise ConfigError(f"config.sweep.parameter: must be 'rq', 't_h' or 'goal', "
                          f"got '{sweep_parameter}'")

    diag = top.sub("diagnostics")
    diag_cfg = {
        "terminal_cost": diag.take("terminal_cost", "bool", True),
        "energy": diag.take("energy", "bool", True),
        "state_error": diag.take("state_error", "bool", False),
        "grad_jf": diag.take("grad_jf", "bool", False),
        "hjb": diag.take("hjb", "bool", False),
        "grid_nx": diag.take("grid_nx", "int", 41),
        "grid_ny": diag.take("grid_ny", "int", 21),
        "energy_time": diag.take("energy_time", "number", 0.0),
        "hjb_samples": diag.take("hjb_samples", "int", 12),
        "hjb_h": diag.take("hjb_h", "number", 1e-4),
    }
    diag.close()

    patches = top.sub("patches")
    centers = patches.take("centers", "list", [])
    patches_cfg = {
        "radius": patches.take("radius", "number", 0.05),
        "n_particles": patches.take("n_particles", "int", 200),
        "t_a": patches.take("t_a", "number", 9.0),
        "snapshot_times": [float(v) for v in patches.take("snapshot_times", "list", [0.0, 9.0])],
        "offset": patches.take("offset", "number", 0.1),
        "margin": patches.take("margin", "number", 0.15),
        "placement": patches.take("placement", "str", "explicit"),
        "centers": [list(_point(c, "config.patches.centers")) for c in centers],
    }
    patches.close()
    if patches_cfg["placement"] not in ("explicit", "straddle_max", "low_sigma"):
        raise ConfigError("config.patches.placement: must be 'explicit', 'straddle_max' "
                          f"or 'low_sigma', got '{patches_cfg['placement']}'")

    top.close()

    rc = RunConfig(
        flow_name=flow_name, flow_params=flow_params, domain=domain,
        grid_nx=grid_nx, grid_ny=grid_ny,
        t0=t0, t_a=t_a, dt=dt, scheme=scheme, backward=backward,
        q=q, r=r, t_h=t_h, ocp_dt=ocp_dt, goal=goal, u_max=u_max,
        tol=tol, max_iterations=max_iterations, step_rule=step_rule,
        policy_nx=policy_nx, policy_ny=policy_ny, policy_t_start=policy_t_start,
        dt_policy=dt_policy, n_times=n_times, periodic=periodic,
        time_interp=time_interp,
        render_enabled=render_enabled, render_vmin=render_vmin,
        render_vmax=render_vmax, render_ridge_percentile=render_ridge,
        ridge_percentile=ridge_percentile, ridge_write_mask=ridge_write_mask,
        sweep_parameter=sweep_parameter, sweep_values=sweep_values,
        diag=diag_cfg, patches=patches_cfg,
    )
    # construct every referenced object once so invariant violations are
    # reported at config time, not halfway through a run
    rc.flow()
    rc.ftle_grid()
    rc.step_spec()
    rc.weights()
    rc.goal_spec()
    rc.horizon()
    rc.bounds()
    rc.solver_options()
    rc.policy_grid()
    if not np.isfinite(t0):
        raise ConfigError("config.times.t0: must be finite")
    return rc


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw)
