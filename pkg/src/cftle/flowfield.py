"""Analytic planar velocity fields evaluated at arbitrary space-time points.

Every field exposes the same interface:

    velocity(p, t)  -> array shaped like p, the velocity at position p, time t
    jacobian(p, t)  -> (..., 2, 2) spatial velocity Jacobian
    descriptor()    -> JSON-friendly dict identifying the field and parameters

`p` is an array with the last axis of length 2; `t` is a scalar. Fields are
defined by their formulas on all of R^2, not just inside a domain box, so
integrators never have to special-case excursions. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PI = np.pi


@dataclass(frozen=True)
class DoubleGyreParams:
    """a: velocity magnitude, epsilon: x-oscillation magnitude, omega: angular frequency."""

    a: float = 0.1
    epsilon: float = 0.25
    omega: float = 2.0 * PI / 10.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"double gyre needs a > 0, got {self.a}")
        if not (0.0 <= self.epsilon < 0.5):
            raise ValueError(f"double gyre needs 0 <= epsilon < 0.5, got {self.epsilon}")
        if not self.omega > 0:
            raise ValueError(f"double gyre needs omega > 0, got {self.omega}")

    def period(self) -> float:
        return 2.0 * PI / self.omega


class DoubleGyre:
    """Two counter-rotating cells on [0,2]x[0,1] with a periodic x-perturbation.

    Stream function psi = a sin(pi f(x,t)) sin(pi y) with
    f(x,t) = epsilon sin(omega t) x^2 + (1 - 2 epsilon sin(omega t)) x.
    epsilon = 0 gives the steady two-gyre flow; the boundary of the unit
    box is invariant for every t.
    """

    def __init__(self, params: DoubleGyreParams = DoubleGyreParams()):
        self.params = params

    def _f_terms(self, x, t):
        e = self.params.epsilon * np.sin(self.params.omega * t)
        f = e * x * x + (1.0 - 2.0 * e) * x
        fx = 2.0 * e * x + (1.0 - 2.0 * e)
        return f, fx

    def velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        x = p[..., 0]
        y = p[..., 1]
        a = self.params.a
        f, _ = self._f_terms(x, t)
        out = np.empty_like(p)
        out[..., 0] = -PI * a * np.sin(PI * f) * np.cos(PI * y)
        out[..., 1] = PI * a * np.cos(PI * f) * np.sin(PI * y)
        return out

    def jacobian(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        x = p[..., 0]
        y = p[..., 1]
        a = self.params.a
        f, fx = self._f_terms(x, t)
        sf = np.sin(PI * f)
        cf = np.cos(PI * f)
        sy = np.sin(PI * y)
        cy = np.cos(PI * y)
        J = np.empty(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = -PI * PI * a * cf * cy * fx
        J[..., 0, 1] = PI * PI * a * sf * sy
        J[..., 1, 0] = -PI * PI * a * sf * sy * fx
        J[..., 1, 1] = PI * PI * a * cf * cy
        return J

    def descriptor(self) -> dict:
        return {"name": "double_gyre",
                "params": {"a": self.params.a,
                           "epsilon": self.params.epsilon,
                           "omega": self.params.omega}}


class SaddleFlow:
    """v = (rate*x, -rate*y). Linear hyperbolic flow with known stretching."""

    def __init__(self, rate: float = 1.0):
        if not np.isfinite(rate):
            raise ValueError("saddle rate must be finite")
        self.rate = rate

    def velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        out[..., 0] = self.rate * p[..., 0]
        out[..., 1] = -self.rate * p[..., 1]
        return out

    def jacobian(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = self.rate
        J[..., 1, 1] = -self.rate
        return J

    def descriptor(self) -> dict:
        return {"name": "saddle", "params": {"rate": self.rate}}


class RotationFlow:
    """Rigid rotation v = (-omega*y, omega*x). Zero material stretching."""

    def __init__(self, omega: float = 1.0):
        if not np.isfinite(omega):
            raise ValueError("rotation omega must be finite")
        self.omega = omega

    def velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        out[..., 0] = -self.omega * p[..., 1]
        out[..., 1] = self.omega * p[..., 0]
        return out

    def jacobian(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 1] = -self.omega
        J[..., 1, 0] = self.omega
        return J

    def descriptor(self) -> dict:
        return {"name": "rotation", "params": {"omega": self.omega}}


class ZeroFlow:
    """Quiescent field; useful as the background for control-only studies."""

    def velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        return np.zeros_like(np.asarray(p, dtype=float))

    def jacobian(self, p: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.zeros(p.shape[:-1] + (2, 2))

    def descriptor(self) -> dict:
        return {"name": "zero", "params": {}}


def double_gyre_velocity(p, t: float, params: DoubleGyreParams) -> np.ndarray:
    return DoubleGyre(params).velocity(np.asarray(p, dtype=float), t)


def saddle_velocity(p, t: float, rate: float) -> np.ndarray:
    return SaddleFlow(rate).velocity(np.asarray(p, dtype=float), t)


def rotation_velocity(p, t: float, omega: float) -> np.ndarray:
    return RotationFlow(omega).velocity(np.asarray(p, dtype=float), t)


def make_flow(name: str, params: dict | None = None):
    """Build a flow from its descriptor name and parameter dict."""
    params = dict(params or {})
    if name == "double_gyre":
        return DoubleGyre(DoubleGyreParams(**params))
    if name == "saddle":
        return SaddleFlow(**params)
    if name == "rotation":
        return RotationFlow(**params)
    if name == "zero":
        if params:
            raise ValueError("zero flow takes no parameters")
        return ZeroFlow()
    raise ValueError(f"unknown flow '{name}' (known: double_gyre, saddle, rotation, zero)")
