"""Fixed-step time integration of points and dense particle grids.

The advection time T_A is signed: positive integrates forward, negative
backward. If |T_A| is not an integer multiple of dt, one final remainder
step makes the trajectory land exactly on t0 + T_A; exact adherence matters
because the exponent field divides by |T_A| downstream.

Grid advection evaluates whole blocks of particles per call but performs
the same arithmetic per particle as a single-point advect, so the two paths
agree bitwise (covered by tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grids import GridSpec, VectorField
from .parallel import POINT_CHUNK, run_chunked

SCHEMES = ("rk4", "euler")


class IntegrationError(Exception):
    """A step produced a non-finite state."""

    def __init__(self, message: str, position=None, time: float | None = None):
        super().__init__(message)
        self.position = position
        self.time = time


@dataclass(frozen=True)
class StepSpec:
    """dt is a positive magnitude; direction comes from the advection time."""

    dt: float = 0.1
    scheme: str = "rk4"

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got '{self.scheme}'")


@dataclass
class Trajectory:
    times: np.ndarray              # (n+1,), strictly monotone
    states: np.ndarray             # (n+1, 2)
    controls: Optional[np.ndarray] = None  # (n, 2) when present

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.shape != (self.times.size, 2):
            raise ValueError("trajectory times/states lengths are inconsistent")
        d = np.diff(self.times)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("trajectory times must be strictly monotone")
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float)
            if self.controls.shape != (self.times.size - 1, 2):
                raise ValueError("trajectory controls length must be len(times) - 1")


def _rk4(field, x, t, h):
    k1 = field.velocity(x, t)
    k2 = field.velocity(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field.velocity(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field.velocity(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler(field, x, t, h):
    return x + h * field.velocity(x, t)


def _stepper(scheme: str):
    return _rk4 if scheme == "rk4" else _euler


def step(field, x, t: float, dt_signed: float, scheme: str = "rk4"):
    """One integration step of dx/dt = field(x, t); raises on non-finite output."""
    if dt_signed == 0 or not np.isfinite(dt_signed):
        raise ValueError(f"dt_signed must be nonzero and finite, got {dt_signed}")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got '{scheme}'")
    x = np.asarray(x, dtype=float)
    out = _stepper(scheme)(field, x, t, dt_signed)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step from t={t}",
                               position=x, time=t)
    return out


def plan_steps(t_a: float, dt: float) -> tuple[int, float]:
    """Number of full steps plus the remainder magnitude for |T_A|.

    Treats |T_A| as an exact multiple of dt when the float quotient is
    within 1e-9 of an integer, so 15/0.1 does not leak a dust step.
    """
    mag = abs(t_a)
    quotient = mag / dt
    nearest = round(quotient)
    if nearest >= 1 and abs(quotient - nearest) <= 1e-9 * max(1.0, nearest):
        return int(nearest), 0.0
    n_full = int(math.floor(quotient))
    rem = mag - n_full * dt
    if rem <= 1e-12 * max(1.0, mag):
        rem = 0.0
    return n_full, rem


def advect(field, x0, t0: float, t_a: float, spec: StepSpec = StepSpec()) -> Trajectory:
    """Integrate one point from t0 to t0 + T_A, recording every step."""
    if t_a == 0 or not np.isfinite(t_a):
        raise ValueError("advection time must be nonzero and finite")
    x = np.asarray(x0, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"x0 must be a single 2-vector, got shape {x.shape}")
    n_full, rem = plan_steps(t_a, spec.dt)
    h = math.copysign(spec.dt, t_a)
    stepper = _stepper(spec.scheme)

    states = np.empty((n_full + (1 if rem else 0) + 1, 2))
    times = np.empty(states.shape[0])
    states[0] = x
    times[0] = t0
    for k in range(n_full):
        t_k = t0 + k * h
        x = stepper(field, x, t_k, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t_k + h}",
                                   position=states[k], time=t_k)
        states[k + 1] = x
        times[k + 1] = t_k + h
    if rem:
        t_k = t0 + n_full * h
        x = stepper(field, x, t_k, math.copysign(rem, t_a))
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t0 + t_a}",
                                   position=states[n_full], time=t_k)
        states[-1] = x
        times[-1] = t0 + t_a
    return Trajectory(times=times, states=states)


def flow_map_grid(field, grid: GridSpec, t0: float, t_a: float,
                  spec: StepSpec = StepSpec(), threads: int = 1) -> VectorField:
    """Advect every grid node from t0 to t0 + T_A; failures become masked nodes.

    Non-finite states propagate through the remaining steps as NaN instead
    of aborting the grid; the mask is finite-ness of the endpoint. Output is
    independent of thread count (fixed chunking, disjoint writes).
    """
    if t_a == 0 or not np.isfinite(t_a):
        raise ValueError("advection time must be nonzero and finite")
    n_full, rem = plan_steps(t_a, spec.dt)
    h = math.copysign(spec.dt, t_a)
    stepper = _stepper(spec.scheme)
    pts = np.ascontiguousarray(grid.nodes().reshape(-1, 2))
    out = np.empty_like(pts)

    def work(lo: int, hi: int) -> None:
        x = pts[lo:hi].copy()
        with np.errstate(all="ignore"):
            for k in range(n_full):
                x = stepper(field, x, t0 + k * h, h)
            if rem:
                x = stepper(field, x, t0 + n_full * h, math.copysign(rem, t_a))
        out[lo:hi] = x

    run_chunked(work, pts.shape[0], POINT_CHUNK, threads)
    values = out.reshape(grid.ny, grid.nx, 2)
    return VectorField(grid=grid, values=values)
