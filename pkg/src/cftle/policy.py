"""Space-time control-policy tables: generation by receding-horizon solves,
interpolation, composition with a background flow, time reversal, and file
round-tripping.

A policy stores the first action of a finite-horizon solve at every node of
a coarse spatial grid and a ladder of start times. Lookups interpolate
bilinearly in space and linearly in time (nearest-sample mode is available
for ablation). Spatial queries outside the grid clamp to the box edge so
the combined field stays defined when agents are pushed across the
boundary; time queries clamp to the sampled span unless the policy is
flagged periodic, in which case they wrap modulo the span.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from .grids import DomainBox, GridSpec
from .ocp import (ActuationBounds, CostWeights, GoalSpec, HorizonSpec,
                  SolverOptions, solve_ocp_batch)
from .parallel import NODE_CHUNK, run_chunked
from .serialization import FORMAT_VERSION, FormatError, read_blob, write_blob

TIME_INTERPS = ("linear", "nearest")


@dataclass
class PolicyGrid:
    grid: GridSpec
    t_start: float
    dt_policy: float
    n_times: int
    controls: np.ndarray          # (n_times, ny, nx, 2), |u| <= u_max componentwise
    u_max: float
    goal: np.ndarray              # (2,)
    weights: Optional[CostWeights] = None
    horizon: Optional[HorizonSpec] = None
    flow_descriptor: dict = dataclass_field(default_factory=dict)
    generator: str = "mpc"
    periodic: bool = False
    time_interp: str = "linear"

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)
        if self.n_times < 1 or self.dt_policy <= 0:
            raise ValueError("policy needs n_times >= 1 and dt_policy > 0")
        want = (self.n_times, self.grid.ny, self.grid.nx, 2)
        if self.controls.shape != want:
            raise ValueError(f"policy controls shape {self.controls.shape}, expected {want}")
        if not np.all(np.isfinite(self.controls)):
            raise ValueError("policy controls must be finite")
        if not (np.isfinite(self.u_max) and self.u_max > 0):
            raise ValueError(f"policy u_max must be positive, got {self.u_max}")
        if np.any(np.abs(self.controls) > self.u_max):
            worst = float(np.abs(self.controls).max())
            raise ValueError(f"policy control magnitude {worst} exceeds bound {self.u_max}")
        if self.time_interp not in TIME_INTERPS:
            raise ValueError(f"time_interp must be one of {TIME_INTERPS}")
        if self.generator not in ("mpc", "external"):
            raise ValueError(f"generator must be 'mpc' or 'external', got '{self.generator}'")
        self._xs = self.grid.xs()
        self._ys = self.grid.ys()

    @property
    def span(self) -> float:
        """Length of the sampled time window."""
        return (self.n_times - 1) * self.dt_policy

    def _time_bracket(self, t: float) -> tuple[int, int, float]:
        if self.n_times == 1:
            return 0, 0, 0.0
        if self.periodic:
            tau = (t - self.t_start) % self.span
        else:
            tau = min(max(t - self.t_start, 0.0), self.span)
        ft = tau / self.dt_policy
        if self.time_interp == "nearest":
            k = int(np.clip(round(ft), 0, self.n_times - 1))
            return k, k, 0.0
        k = int(np.clip(np.floor(ft), 0, self.n_times - 2))
        # weight against the actual sample stamps, not ft - k: a query at a
        # stamp then subtracts to exactly 0 and reproduces the stored slice
        w = (tau - k * self.dt_policy) / self.dt_policy
        w = min(max(w, 0.0), 1.0)
        return k, k + 1, w

    def _bilinear(self, table: np.ndarray, pts: np.ndarray) -> np.ndarray:
        grid = self.grid
        x = np.clip(pts[..., 0], grid.domain.x_min, grid.domain.x_max)
        y = np.clip(pts[..., 1], grid.domain.y_min, grid.domain.y_max)
        fx = (x - grid.domain.x_min) / grid.spacing_x
        fy = (y - grid.domain.y_min) / grid.spacing_y
        ix = np.clip(np.floor(fx).astype(np.int64), 0, grid.nx - 2)
        iy = np.clip(np.floor(fy).astype(np.int64), 0, grid.ny - 2)
        # same stamp rule in space: weights come from the bracketing node
        # coordinates so node queries land on exactly 0 or 1
        xs = self._xs
        ys = self._ys
        wx = np.clip((x - xs[ix]) / (xs[ix + 1] - xs[ix]), 0.0, 1.0)[..., None]
        wy = np.clip((y - ys[iy]) / (ys[iy + 1] - ys[iy]), 0.0, 1.0)[..., None]
        c00 = table[iy, ix]
        c01 = table[iy, ix + 1]
        c10 = table[iy + 1, ix]
        c11 = table[iy + 1, ix + 1]
        return ((1.0 - wy) * ((1.0 - wx) * c00 + wx * c01)
                + wy * ((1.0 - wx) * c10 + wx * c11))

    def interpolate(self, p: np.ndarray, t: float) -> np.ndarray:
        """Control lookup at positions p (..., 2) and scalar time t."""
        pts = np.asarray(p, dtype=float)
        k0, k1, w = self._time_bracket(t)
        u0 = self._bilinear(self.controls[k0], pts)
        if k1 == k0:
            return u0
        u1 = self._bilinear(self.controls[k1], pts)
        return (1.0 - w) * u0 + w * u1

    def descriptor(self) -> dict:
        return {"generator": self.generator,
                "nx": self.grid.nx, "ny": self.grid.ny,
                "n_times": self.n_times, "dt_policy": self.dt_policy,
                "t_start": self.t_start, "u_max": self.u_max,
                "goal": [float(self.goal[0]), float(self.goal[1])],
                "periodic": self.periodic, "flow": self.flow_descriptor}


class ControlledField:
    """Background velocity plus interpolated policy control; duck-typed like
    any other flow for the integrators, but with no spatial Jacobian (the
    interpolated control is only piecewise smooth)."""

    def __init__(self, flow, policy: PolicyGrid):
        self.flow = flow
        self.policy = policy

    def velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        return self.flow.velocity(p, t) + self.policy.interpolate(p, t)

    def descriptor(self) -> dict:
        return {"name": "controlled", "background": self.flow.descriptor(),
                "policy": self.policy.descriptor()}


def controlled_field(flow, policy: PolicyGrid) -> ControlledField:
    return ControlledField(flow, policy)


@dataclass
class GenerationReport:
    n_solves: int
    non_converged: int
    non_converged_samples: list      # [t_index, iy, ix], capped
    max_abs_control: float
    median_iterations: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {"n_solves": self.n_solves, "non_converged": self.non_converged,
                "non_converged_samples": self.non_converged_samples,
                "max_abs_control": self.max_abs_control,
                "median_iterations": self.median_iterations,
                "wall_time_s": self.wall_time_s}


def generate_mpc_policy(flow, pgrid: GridSpec, t_start: float, dt_policy: float,
                        n_times: int, weights: CostWeights, goal: GoalSpec,
                        horizon: HorizonSpec, bounds: ActuationBounds,
                        options: SolverOptions = SolverOptions(),
                        periodic: bool = False, time_interp: str = "linear",
                        threads: int = 1) -> tuple[PolicyGrid, GenerationReport]:
    """Solve the horizon problem at every node and time sample; store the
    first action. Each node's solve at t_{k+1} warm-starts from its own
    solution at t_k shifted by one step (drop the first control, repeat the
    last). Nodes are processed in fixed chunks so the result is independent
    of the thread count."""
    if n_times < 1 or dt_policy <= 0:
        raise ValueError("policy generation needs n_times >= 1 and dt_policy > 0")
    t0_wall = _time.perf_counter()
    nodes = np.ascontiguousarray(pgrid.nodes().reshape(-1, 2))
    n_nodes = nodes.shape[0]
    K = horizon.n_steps
    controls = np.empty((n_times, pgrid.ny, pgrid.nx, 2))
    warm = np.zeros((n_nodes, K, 2))
    have_warm = False
    iters_all = np.empty((n_times, n_nodes), dtype=int)
    conv_all = np.empty((n_times, n_nodes), dtype=bool)

    for j in range(n_times):
        t_j = t_start + j * dt_policy
        first = np.empty((n_nodes, 2))
        next_warm = np.empty((n_nodes, K, 2))

        def work(lo: int, hi: int) -> None:
            sol = solve_ocp_batch(nodes[lo:hi], t_j, flow, weights, goal,
                                  horizon, bounds,
                                  warm_start=warm[lo:hi] if have_warm else None,
                                  options=options)
            first[lo:hi] = sol.controls[:, 0]
            next_warm[lo:hi, :-1] = sol.controls[:, 1:]
            next_warm[lo:hi, -1] = sol.controls[:, -1]
            iters_all[j, lo:hi] = sol.iterations
            conv_all[j, lo:hi] = sol.converged

        run_chunked(work, n_nodes, NODE_CHUNK, threads)
        controls[j] = first.reshape(pgrid.ny, pgrid.nx, 2)
        warm = next_warm
        have_warm = True

    bad = np.argwhere(~conv_all)
    samples = [[int(j), int(i // pgrid.nx), int(i % pgrid.nx)] for j, i in bad[:200]]
    report = GenerationReport(
        n_solves=n_times * n_nodes,
        non_converged=int(bad.shape[0]),
        non_converged_samples=samples,
        max_abs_control=float(np.abs(controls).max()),
        median_iterations=float(np.median(iters_all)),
        wall_time_s=_time.perf_counter() - t0_wall,
    )
    policy = PolicyGrid(grid=pgrid, t_start=t_start, dt_policy=dt_policy,
                        n_times=n_times, controls=controls, u_max=bounds.u_max,
                        goal=goal.point, weights=weights, horizon=horizon,
                        flow_descriptor=flow.descriptor(), generator="mpc",
                        periodic=periodic, time_interp=time_interp)
    return policy, report


def reverse_policy_periodic(policy: PolicyGrid, period: float) -> PolicyGrid:
    """Read the time samples backward; valid only for a policy that spans
    exactly one period with periodic extension, where backward integration
    visits the stored phases in reverse sequence."""
    if not policy.periodic:
        raise ValueError("policy reversal requires the periodic extension flag")
    if abs(policy.span - period) > 1e-9:
        raise ValueError(f"policy span {policy.span} does not match period {period}")
    return PolicyGrid(grid=policy.grid, t_start=policy.t_start,
                      dt_policy=policy.dt_policy, n_times=policy.n_times,
                      controls=policy.controls[::-1].copy(), u_max=policy.u_max,
                      goal=policy.goal.copy(), weights=policy.weights,
                      horizon=policy.horizon, flow_descriptor=dict(policy.flow_descriptor),
                      generator=policy.generator, periodic=True,
                      time_interp=policy.time_interp)


def save_policy(policy: PolicyGrid, path: str) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "policy",
        "nx": policy.grid.nx,
        "ny": policy.grid.ny,
        "n_times": policy.n_times,
        "domain": policy.grid.domain.to_dict(),
        "t_start": policy.t_start,
        "dt_policy": policy.dt_policy,
        "u_max": policy.u_max,
        "goal": [float(policy.goal[0]), float(policy.goal[1])],
        "weights": None if policy.weights is None else
                   {"q": policy.weights.q, "r": policy.weights.r},
        "horizon": None if policy.horizon is None else
                   {"t_h": policy.horizon.t_h, "dt": policy.horizon.dt},
        "generator": policy.generator,
        "flow": policy.flow_descriptor,
        "periodic": policy.periodic,
        "time_interp": policy.time_interp,
    }
    payload = np.ascontiguousarray(policy.controls, dtype="<f8").tobytes()
    write_blob(path, header, payload)


def load_policy(path: str) -> PolicyGrid:
    header, payload = read_blob(path)
    if header.get("kind") != "policy":
        raise FormatError(f"{path}: not a policy file (kind={header.get('kind')!r})")
    try:
        nx = int(header["nx"])
        ny = int(header["ny"])
        n_times = int(header["n_times"])
        domain = DomainBox.from_dict(header["domain"])
        t_start = float(header["t_start"])
        dt_policy = float(header["dt_policy"])
        u_max = float(header["u_max"])
        goal = [float(header["goal"][0]), float(header["goal"][1])]
        generator = str(header["generator"])
        flow_desc = header["flow"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: incomplete policy header ({exc})") from exc
    expected = n_times * ny * nx * 2 * 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    controls = np.frombuffer(payload, dtype="<f8").astype(float).reshape(n_times, ny, nx, 2)
    weights = header.get("weights")
    horizon = header.get("horizon")
    try:
        policy = PolicyGrid(
            grid=GridSpec(domain=domain, nx=nx, ny=ny),
            t_start=t_start, dt_policy=dt_policy, n_times=n_times,
            controls=controls, u_max=u_max, goal=np.array(goal),
            weights=None if weights is None else CostWeights(float(weights["q"]),
                                                             float(weights["r"])),
            horizon=None if horizon is None else HorizonSpec(float(horizon["t_h"]),
                                                             float(horizon["dt"])),
            flow_descriptor=flow_desc if isinstance(flow_desc, dict) else {},
            generator=generator,
            periodic=bool(header.get("periodic", False)),
            time_interp=str(header.get("time_interp", "linear")),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid policy content ({exc})") from exc
    return policy
