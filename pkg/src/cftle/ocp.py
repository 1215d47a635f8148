"""Finite-horizon quadratic-cost optimal control for the kinematic agent.

Problem: minimize  sum_k dt * ( q |x_k - goal|^2 + r |u_k|^2 )  over the
per-step controls u_0..u_{K-1}, subject to dx/dt = v(x, t) + u with u held
constant over each step (zero-order hold) and |u| bounded componentwise.
The quadrature is a left rectangle over the horizon; there is no terminal
term, so x_K carries no cost.

Gradients are exact for the discretized problem: the four-stage integrator
is differentiated analytically step by step and accumulated in reverse
(discrete adjoint). The solver is projected gradient descent with Armijo
backtracking; the trial step uses a spectral (Barzilai-Borwein) length by
default, because a fixed unit trial step collapses to tiny accepted steps
on the low-curvature modes of this problem and stalls (see SolverOptions).

Everything is vectorized over a batch of independent instances; the
single-instance entry points wrap a batch of one. 2x2 matrix products are
written out elementwise so results never route through BLAS, whose
reductions may vary between builds; bitwise reproducibility across thread
counts and batch groupings is required downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CostWeights:
    """q weights squared distance to goal, r squared control magnitude."""

    q: float
    r: float

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q > 0):
            raise ValueError(f"state weight q must be positive, got {self.q}")
        if not (np.isfinite(self.r) and self.r >= 0):
            raise ValueError(f"control weight r must be nonnegative, got {self.r}")

    @property
    def rq(self) -> float:
        return self.r / self.q


@dataclass(frozen=True)
class HorizonSpec:
    t_h: float
    dt: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.t_h) and self.t_h > 0):
            raise ValueError(f"horizon length must be positive, got {self.t_h}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"horizon dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"horizon shorter than one step: t_h={self.t_h}, dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_h / self.dt))


@dataclass(frozen=True)
class GoalSpec:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("goal must be finite")

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ActuationBounds:
    u_max: float

    def __post_init__(self):
        if not (np.isfinite(self.u_max) and self.u_max > 0):
            raise ValueError(f"u_max must be positive, got {self.u_max}")


@dataclass(frozen=True)
class SolverOptions:
    """step_rule 'spectral' scales the trial step by <s,s>/<s,y> from the
    last accepted move (clipped to [1e-10, 1e6], unit on the first
    iteration); 'fixed' always tries armijo_init, which is robust but can
    crawl: on this problem the projected-gradient map then contracts by
    only ~0.8 per iteration for stiff r, hitting the iteration cap."""

    tol: float = 1e-6
    max_iterations: int = 2000
    armijo_init: float = 1.0
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    min_step: float = 1e-12
    step_rule: str = "spectral"

    def __post_init__(self):
        if self.step_rule not in ("spectral", "fixed"):
            raise ValueError(f"step_rule must be 'spectral' or 'fixed', got '{self.step_rule}'")
        if not (self.tol > 0 and self.max_iterations >= 1):
            raise ValueError("tol must be positive and max_iterations >= 1")
        if not (0 < self.backtrack < 1 and 0 < self.sufficient_decrease < 1):
            raise ValueError("backtrack and sufficient_decrease must lie in (0, 1)")


@dataclass
class OcpSolution:
    controls: np.ndarray        # (K, 2), inside the box exactly
    states: np.ndarray          # (K+1, 2), states[0] = x0
    cost_state: float
    cost_control: float
    cost_total: float
    iterations: int
    converged: bool
    kkt_residual: float
    cost_trace: Optional[tuple] = None


@dataclass
class BatchSolution:
    """Stacked per-instance solutions from solve_ocp_batch."""

    controls: np.ndarray        # (B, K, 2)
    states: np.ndarray          # (B, K+1, 2)
    cost_state: np.ndarray      # (B,)
    cost_control: np.ndarray
    iterations: np.ndarray      # (B,) int
    converged: np.ndarray       # (B,) bool
    kkt_residual: np.ndarray    # (B,)

    @property
    def cost_total(self) -> np.ndarray:
        return self.cost_state + self.cost_control

    def solution(self, i: int, cost_trace=None) -> OcpSolution:
        cs = float(self.cost_state[i])
        cc = float(self.cost_control[i])
        return OcpSolution(controls=self.controls[i].copy(),
                           states=self.states[i].copy(),
                           cost_state=cs, cost_control=cc, cost_total=cs + cc,
                           iterations=int(self.iterations[i]),
                           converged=bool(self.converged[i]),
                           kkt_residual=float(self.kkt_residual[i]),
                           cost_trace=cost_trace)


def _mm22(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Batched 2x2 product with a fixed elementwise expression order."""
    out = np.empty(np.broadcast_shapes(A.shape, B.shape))
    out[..., 0, 0] = A[..., 0, 0] * B[..., 0, 0] + A[..., 0, 1] * B[..., 1, 0]
    out[..., 0, 1] = A[..., 0, 0] * B[..., 0, 1] + A[..., 0, 1] * B[..., 1, 1]
    out[..., 1, 0] = A[..., 1, 0] * B[..., 0, 0] + A[..., 1, 1] * B[..., 1, 0]
    out[..., 1, 1] = A[..., 1, 0] * B[..., 0, 1] + A[..., 1, 1] * B[..., 1, 1]
    return out


def _mtv22(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched transpose-matrix times vector: A^T v."""
    out = np.empty(np.broadcast_shapes(A.shape[:-1], v.shape))
    out[..., 0] = A[..., 0, 0] * v[..., 0] + A[..., 1, 0] * v[..., 1]
    out[..., 1] = A[..., 0, 1] * v[..., 0] + A[..., 1, 1] * v[..., 1]
    return out


def _eye_like(n: int) -> np.ndarray:
    I = np.zeros((n, 2, 2))
    I[:, 0, 0] = 1.0
    I[:, 1, 1] = 1.0
    return I


def _forward(flow, x0: np.ndarray, t0: float, U: np.ndarray, dt: float,
             q: float, r: float, goal: np.ndarray, with_tangents: bool):
    """Shared rollout. The state/cost arithmetic is identical whether or
    not tangents are requested, so line-search costs match gradient-pass
    costs bitwise."""
    B, K = U.shape[0], U.shape[1]
    X = np.empty((B, K + 1, 2))
    X[:, 0] = x0
    cs = np.zeros(B)
    cc = np.zeros(B)
    Phi = Bm = None
    if with_tangents:
        Phi = np.empty((B, K, 2, 2))
        Bm = np.empty((B, K, 2, 2))
        I = _eye_like(B)
    x = x0
    for k in range(K):
        u = U[:, k]
        e = x - goal
        cs = cs + q * dt * (e[:, 0] * e[:, 0] + e[:, 1] * e[:, 1])
        cc = cc + r * dt * (u[:, 0] * u[:, 0] + u[:, 1] * u[:, 1])
        t = t0 + k * dt
        x1 = x
        k1 = flow.velocity(x1, t) + u
        x2 = x1 + (0.5 * dt) * k1
        k2 = flow.velocity(x2, t + 0.5 * dt) + u
        x3 = x1 + (0.5 * dt) * k2
        k3 = flow.velocity(x3, t + 0.5 * dt) + u
        x4 = x1 + dt * k3
        k4 = flow.velocity(x4, t + dt) + u
        if with_tangents:
            A1 = flow.jacobian(x1, t)
            A2 = flow.jacobian(x2, t + 0.5 * dt)
            A3 = flow.jacobian(x3, t + 0.5 * dt)
            A4 = flow.jacobian(x4, t + dt)
            # stage tangents w.r.t. the step's start state
            D2x = _mm22(A2, I + (0.5 * dt) * A1)
            D3x = _mm22(A3, I + (0.5 * dt) * D2x)
            D4x = _mm22(A4, I + dt * D3x)
            Phi[:, k] = I + (dt / 6.0) * (A1 + 2.0 * D2x + 2.0 * D3x + D4x)
            # stage tangents w.r.t. the step's held control
            D2u = (0.5 * dt) * A2 + I
            D3u = _mm22(A3, (0.5 * dt) * D2u) + I
            D4u = _mm22(A4, dt * D3u) + I
            Bm[:, k] = (dt / 6.0) * (I + 2.0 * D2u + 2.0 * D3u + D4u)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[:, k + 1] = x
    return X, cs, cc, Phi, Bm


def _adjoint_gradient(U, X, Phi, Bm, dt, q, r, goal):
    """Reverse accumulation of the cost gradient w.r.t. each control."""
    B, K = U.shape[0], U.shape[1]
    G = np.empty_like(U)
    lam = np.zeros((B, 2))  # no terminal cost, so the costate starts at zero
    for k in range(K - 1, -1, -1):
        G[:, k] = (2.0 * r * dt) * U[:, k] + _mtv22(Bm[:, k], lam)
        e = X[:, k] - goal
        lam = (2.0 * q * dt) * e + _mtv22(Phi[:, k], lam)
    return G


def _as_batch(x0) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"initial states must have shape (B, 2), got {x.shape}")
    return x


def rollout(x0, t0: float, controls: np.ndarray, flow, weights: CostWeights,
            goal: GoalSpec, horizon: HorizonSpec):
    """States plus split costs for one control sequence.

    Returns (states (K+1,2), cost_state, cost_control).
    """
    U = np.asarray(controls, dtype=float)
    if U.shape != (horizon.n_steps, 2):
        raise ValueError(f"controls must have shape ({horizon.n_steps}, 2), got {U.shape}")
    X, cs, cc, _, _ = _forward(flow, _as_batch(x0), t0, U[None], horizon.dt,
                               weights.q, weights.r, goal.point, with_tangents=False)
    if not np.all(np.isfinite(X)):
        bad = np.flatnonzero(~np.all(np.isfinite(X[0]), axis=-1))
        raise ValueError(f"non-finite state at rollout step {bad[0]}")
    return X[0], float(cs[0]), float(cc[0])


def gradient(x0, t0: float, controls: np.ndarray, flow, weights: CostWeights,
             goal: GoalSpec, horizon: HorizonSpec) -> np.ndarray:
    """Exact gradient of the discretized cost w.r.t. each control, (K, 2)."""
    U = np.asarray(controls, dtype=float)
    if U.shape != (horizon.n_steps, 2):
        raise ValueError(f"controls must have shape ({horizon.n_steps}, 2), got {U.shape}")
    X, _, _, Phi, Bm = _forward(flow, _as_batch(x0), t0, U[None], horizon.dt,
                                weights.q, weights.r, goal.point, with_tangents=True)
    G = _adjoint_gradient(U[None], X, Phi, Bm, horizon.dt, weights.q, weights.r, goal.point)
    return G[0]


def solve_ocp_batch(x0s, t0: float, flow, weights: CostWeights, goal: GoalSpec,
                    horizon: HorizonSpec, bounds: ActuationBounds,
                    warm_start: Optional[np.ndarray] = None,
                    options: SolverOptions = SolverOptions()) -> BatchSolution:
    """Projected-gradient solves for a batch of initial states.

    Each instance runs its own line search and step length; batching only
    shares vectorized arithmetic, so results are independent of how a node
    set is partitioned into batches.
    """
    x0s = _as_batch(x0s)
    B = x0s.shape[0]
    K = horizon.n_steps
    dt = horizon.dt
    q, r = weights.q, weights.r
    g = goal.point
    um = bounds.u_max

    if warm_start is not None:
        U = np.clip(np.asarray(warm_start, dtype=float), -um, um)
        if U.shape != (B, K, 2):
            raise ValueError(f"warm start must have shape ({B}, {K}, 2), got {U.shape}")
    else:
        U = np.zeros((B, K, 2))

    X, cs, cc, Phi, Bm = _forward(flow, x0s, t0, U, dt, q, r, g, with_tangents=True)
    G = _adjoint_gradient(U, X, Phi, Bm, dt, q, r, g)
    f = cs + cc

    live = np.ones(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    kkt = np.full(B, np.inf)
    prev_U = None
    prev_G = None

    for it in range(options.max_iterations):
        pg = U - np.clip(U - G, -um, um)
        kkt_now = np.abs(pg).reshape(B, -1).max(axis=1)
        kkt = np.where(live, kkt_now, kkt)
        newly = live & (kkt_now < options.tol)
        iterations[newly] = it
        live &= ~newly
        if not live.any():
            break

        if options.step_rule == "spectral" and prev_U is not None:
            s = U - prev_U
            y = G - prev_G
            ss = (s * s).reshape(B, -1).sum(axis=1)
            sy = (s * y).reshape(B, -1).sum(axis=1)
            safe = sy > 1e-300
            alpha = np.where(safe, np.clip(ss / np.where(safe, sy, 1.0), 1e-10, 1e6),
                             options.armijo_init)
        else:
            alpha = np.full(B, options.armijo_init)
        prev_U = U.copy()
        prev_G = G.copy()

        a = alpha.copy()
        pend = live.copy()
        while pend.any():
            idx = np.flatnonzero(pend)
            Ut = np.clip(U[idx] - a[idx, None, None] * G[idx], -um, um)
            _, cst, cct, _, _ = _forward(flow, x0s[idx], t0, Ut, dt, q, r, g,
                                         with_tangents=False)
            ft = cst + cct
            pred = (G[idx] * (U[idx] - Ut)).reshape(len(idx), -1).sum(axis=1)
            # pred = 0 means the clipped step did not move; never accept it,
            # otherwise a node can spin on zero-progress "successes"
            ok = (ft <= f[idx] - options.sufficient_decrease * pred) & (pred > 0)
            acc = idx[ok]
            U[acc] = Ut[ok]
            f[acc] = ft[ok]
            cs[acc] = cst[ok]
            cc[acc] = cct[ok]
            pend[acc] = False
            rest = idx[~ok]
            a[rest] *= options.backtrack
            dead = rest[a[rest] < options.min_step]
            # line search exhausted: the node stalls where it is, reported
            # through converged=False unless the residual is already in tol
            pend[dead] = False
            live[dead] = False
            iterations[dead] = it + 1

        if live.any():
            sub = np.flatnonzero(live)
            Xs, css, ccs, Phis, Bms = _forward(flow, x0s[sub], t0, U[sub], dt, q, r, g,
                                               with_tangents=True)
            Gs = _adjoint_gradient(U[sub], Xs, Phis, Bms, dt, q, r, g)
            X[sub] = Xs
            cs[sub] = css
            cc[sub] = ccs
            G[sub] = Gs
            f[sub] = css + ccs
            iterations[sub] = it + 1

    pg = U - np.clip(U - G, -um, um)
    kkt = np.abs(pg).reshape(B, -1).max(axis=1)
    converged = kkt < options.tol
    return BatchSolution(controls=U, states=X, cost_state=cs, cost_control=cc,
                         iterations=iterations, converged=converged, kkt_residual=kkt)


def solve_ocp(x0, t0: float, flow, weights: CostWeights, goal: GoalSpec,
              horizon: HorizonSpec, bounds: ActuationBounds,
              warm_start: Optional[np.ndarray] = None,
              options: SolverOptions = SolverOptions(),
              record_trace: bool = False) -> OcpSolution:
    """Solve one instance; see solve_ocp_batch for the method."""
    warm = None if warm_start is None else np.asarray(warm_start, dtype=float)[None]
    trace = None
    if record_trace:
        trace = _solve_traced(_as_batch(x0), t0, flow, weights, goal, horizon,
                              bounds, warm, options)
    batch = solve_ocp_batch(_as_batch(x0), t0, flow, weights, goal, horizon,
                            bounds, warm_start=warm, options=options)
    return batch.solution(0, cost_trace=trace)


def _solve_traced(x0s, t0, flow, weights, goal, horizon, bounds, warm, options):
    """Accepted-iterate cost trace for a batch of one (test instrumentation).

    Runs a plain fixed-rule solve mirroring solve_ocp_batch's accept rule;
    only the costs of accepted iterates are recorded.
    """
    um = bounds.u_max
    K = horizon.n_steps
    dt = horizon.dt
    q, r = weights.q, weights.r
    g = goal.point
    U = np.zeros((1, K, 2)) if warm is None else np.clip(warm, -um, um)
    X, cs, cc, Phi, Bm = _forward(flow, x0s, t0, U, dt, q, r, g, True)
    G = _adjoint_gradient(U, X, Phi, Bm, dt, q, r, g)
    f = float(cs[0] + cc[0])
    trace = [f]
    prev = None
    for _ in range(options.max_iterations):
        pg = U - np.clip(U - G, -um, um)
        if np.abs(pg).max() < options.tol:
            break
        if options.step_rule == "spectral" and prev is not None:
            s = U - prev[0]
            y = G - prev[1]
            sy = float((s * y).sum())
            a = np.clip(float((s * s).sum()) / sy, 1e-10, 1e6) if sy > 1e-300 else options.armijo_init
        else:
            a = options.armijo_init
        prev = (U.copy(), G.copy())
        accepted = False
        while a >= options.min_step:
            Ut = np.clip(U - a * G, -um, um)
            _, cst, cct, _, _ = _forward(flow, x0s, t0, Ut, dt, q, r, g, False)
            ft = float(cst[0] + cct[0])
            pred = float((G * (U - Ut)).sum())
            if pred > 0 and ft <= f - options.sufficient_decrease * pred:
                U, f = Ut, ft
                accepted = True
                break
            a *= options.backtrack
        if not accepted:
            break
        trace.append(f)
        X, cs, cc, Phi, Bm = _forward(flow, x0s, t0, U, dt, q, r, g, True)
        G = _adjoint_gradient(U, X, Phi, Bm, dt, q, r, g)
    return tuple(trace)


def first_action(solution: OcpSolution) -> np.ndarray:
    """The MPC rule: keep only the first control of the optimized sequence."""
    if solution.controls.shape[0] < 1:
        raise ValueError("solution has no controls")
    return solution.controls[0].copy()
