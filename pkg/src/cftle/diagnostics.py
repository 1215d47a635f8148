"""Cost-landscape fields, the identities tying exponent fields to the
control problem, and patch-advection experiments.

Two verification identities are checked numerically rather than assumed:

* the spatial gradient of the terminal cost equals 2 (x(T_A) - goal)^T DPhi
  where DPhi is the flow-map Jacobian (checked by finite differences), and
* the optimal control at a state equals the negative value-function
  gradient scaled by 1/(2r) (checked by re-solving at perturbed states).

For the second identity the 2 in the denominator follows from this
package's cost convention q|e|^2 + r|u|^2 without 1/2 factors: the
stationarity condition of the Hamiltonian gives 2 r u* + dV/dx = 0. The
report also carries the raw magnitude ratio so the scaling is auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ftle import extract_ridges, flow_map_jacobian
from .grids import GridSpec, ScalarField, VectorField
from .integrate import StepSpec, _stepper, flow_map_grid, plan_steps
from .ocp import (ActuationBounds, CostWeights, GoalSpec, HorizonSpec,
                  SolverOptions, solve_ocp_batch)
from .parallel import NODE_CHUNK, run_chunked


@dataclass(frozen=True)
class PatchSpec:
    center: tuple
    radius: float
    n_particles: int = 200
    label: str = "patch"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"patch radius must be positive, got {self.radius}")
        if self.n_particles < 1:
            raise ValueError(f"patch needs at least one particle, got {self.n_particles}")


def terminal_cost_from_map(fmap: VectorField, goal: GoalSpec) -> ScalarField:
    d = fmap.values - goal.point
    values = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
    return ScalarField(grid=fmap.grid, values=values, mask=fmap.mask.copy())


def terminal_cost_field(field, grid: GridSpec, t0: float, t_a: float,
                        goal: GoalSpec, spec: StepSpec = StepSpec(),
                        threads: int = 1) -> ScalarField:
    """Squared endpoint distance to the goal per starting node."""
    if not t_a > 0:
        raise ValueError("terminal cost uses forward advection, t_a must be > 0")
    fmap = flow_map_grid(field, grid, t0, t_a, spec, threads=threads)
    return terminal_cost_from_map(fmap, goal)


def energy_field(policy, grid: GridSpec, t: float) -> ScalarField:
    """Squared interpolated control magnitude at time t on the given grid."""
    u = policy.interpolate(grid.nodes(), t)
    values = u[..., 0] * u[..., 0] + u[..., 1] * u[..., 1]
    return ScalarField(grid=grid, values=values, mask=np.ones(values.shape, dtype=bool))


def accumulated_state_error_field(field, grid: GridSpec, t0: float,
                                  weights: CostWeights, goal: GoalSpec,
                                  horizon: HorizonSpec, bounds: ActuationBounds,
                                  options: SolverOptions = SolverOptions(),
                                  threads: int = 1) -> tuple[ScalarField, dict]:
    """Optimal q-weighted state-error integral per node (raw, unnormalized).

    Non-converged nodes are masked out; the report lists them.
    """
    nodes = np.ascontiguousarray(grid.nodes().reshape(-1, 2))
    n = nodes.shape[0]
    values = np.empty(n)
    conv = np.empty(n, dtype=bool)

    def work(lo: int, hi: int) -> None:
        sol = solve_ocp_batch(nodes[lo:hi], t0, field, weights, goal, horizon,
                              bounds, options=options)
        values[lo:hi] = sol.cost_state
        conv[lo:hi] = sol.converged

    run_chunked(work, n, NODE_CHUNK, threads)
    vals = values.reshape(grid.ny, grid.nx)
    mask = conv.reshape(grid.ny, grid.nx)
    bad = np.argwhere(~mask)
    report = {"n_solves": n, "non_converged": int(bad.shape[0]),
              "non_converged_nodes": [[int(iy), int(ix)] for iy, ix in bad[:200]]}
    out = np.where(mask, vals, np.nan)
    return ScalarField(grid=grid, values=out, mask=mask), report


def check_grad_jf(field, grid: GridSpec, t0: float, t_a: float, goal: GoalSpec,
                  spec: StepSpec = StepSpec(), threads: int = 1
                  ) -> tuple[ScalarField, dict]:
    """Residual between the gridded gradient of the terminal cost and the
    chain-rule form through the flow-map Jacobian.

    Both sides reuse one flow map but difference along different paths, so
    agreement is a real consistency check. The returned field holds the
    absolute residual norm; the summary reports relative errors on interior
    nodes (one-sided edge stencils are first order and would dominate).
    """
    fmap = flow_map_grid(field, grid, t0, t_a, spec, threads=threads)
    J, jmask = flow_map_jacobian(fmap)
    jf = terminal_cost_from_map(fmap, goal)

    V = np.where(jf.mask, jf.values, np.nan)
    dJFdy, dJFdx = np.gradient(V, grid.spacing_y, grid.spacing_x, edge_order=1)

    d = fmap.values - goal.point
    gx = 2.0 * (d[..., 0] * J[..., 0, 0] + d[..., 1] * J[..., 1, 0])
    gy = 2.0 * (d[..., 0] * J[..., 0, 1] + d[..., 1] * J[..., 1, 1])

    rx = dJFdx - gx
    ry = dJFdy - gy
    resid = np.hypot(rx, ry)
    mask = jmask & np.isfinite(resid)
    fieldout = ScalarField(grid=grid, values=np.where(mask, resid, np.nan), mask=mask)

    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = True
    sel = mask & interior
    ref = np.hypot(gx, gy)
    floor = 1e-12 * float(np.nanmax(np.where(sel, ref, 0.0))) if sel.any() else 1.0
    rel = resid / np.maximum(ref, floor if floor > 0 else 1.0)
    summary = {
        "n_interior": int(sel.sum()),
        "median_rel": float(np.median(rel[sel])) if sel.any() else float("nan"),
        "max_rel": float(np.max(rel[sel])) if sel.any() else float("nan"),
        "median_abs": float(np.median(resid[sel])) if sel.any() else float("nan"),
        "max_abs": float(np.max(resid[sel])) if sel.any() else float("nan"),
    }
    return fieldout, summary


def check_hjb_relation(field, samples: np.ndarray, t0: float,
                       weights: CostWeights, goal: GoalSpec, horizon: HorizonSpec,
                       bounds: ActuationBounds, options: SolverOptions = SolverOptions(),
                       h: float = 1e-4) -> dict:
    """Compare the solved first control with the value-gradient prediction
    -grad(V)/(2r) at each strictly interior sample (|u*| < 0.9 u_max in
    both components; saturated samples are excluded up front because the
    identity assumes an inactive bound). grad(V) comes from central
    differences of the optimal cost over the start state, warm-started from
    the center solve. Samples with |u*| below 1e-4 are flagged
    ill-conditioned: the magnitude comparison divides by nearly zero."""
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    if weights.r <= 0:
        raise ValueError("HJB comparison needs r > 0")
    center = solve_ocp_batch(pts, t0, field, weights, goal, horizon, bounds,
                             options=options)
    u_star = center.controls[:, 0]
    interior = np.all(np.abs(u_star) < 0.9 * bounds.u_max, axis=1)

    results = []
    if interior.any():
        sel = np.flatnonzero(interior)
        p = pts[sel]
        warm = center.controls[sel]
        vplus = np.empty((sel.size, 2))
        vminus = np.empty((sel.size, 2))
        for axis in range(2):
            for sign, store in ((1.0, vplus), (-1.0, vminus)):
                shifted = p.copy()
                shifted[:, axis] += sign * h
                sol = solve_ocp_batch(shifted, t0, field, weights, goal, horizon,
                                      bounds, warm_start=warm, options=options)
                store[:, axis] = sol.cost_state + sol.cost_control
        grad_v = (vplus - vminus) / (2.0 * h)
        predicted = -grad_v / (2.0 * weights.r)
        for i, node in enumerate(sel):
            u = u_star[node]
            pred = predicted[i]
            nu = float(np.hypot(u[0], u[1]))
            npred = float(np.hypot(pred[0], pred[1]))
            denom = nu * npred
            cosang = float(np.dot(u, pred) / denom) if denom > 0 else 1.0
            angle = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
            results.append({
                "x0": [float(p[i, 0]), float(p[i, 1])],
                "u_star": [float(u[0]), float(u[1])],
                "predicted": [float(pred[0]), float(pred[1])],
                "angle_deg": angle,
                "mag_rel_err": abs(npred - nu) / nu if nu > 0 else float("inf"),
                "ratio_grad_over_ru": npred * 2.0 / nu if nu > 0 else float("inf"),
                "ill_conditioned": nu < 1e-4,
            })
    well = [s for s in results if not s["ill_conditioned"]]
    report = {
        "n_samples": int(pts.shape[0]),
        "n_interior": int(interior.sum()),
        "n_excluded_saturated": int((~interior).sum()),
        "n_ill_conditioned": len(results) - len(well),
        "samples": results,
        "max_angle_deg": max((s["angle_deg"] for s in well), default=float("nan")),
        "max_mag_rel_err": max((s["mag_rel_err"] for s in well), default=float("nan")),
    }
    return report


def sunflower_disk(center, radius: float, n: int) -> np.ndarray:
    """Deterministic low-discrepancy disk layout (golden-angle spiral)."""
    if n < 1:
        raise ValueError("need at least one particle")
    c = np.asarray(center, dtype=float).reshape(2)
    i = np.arange(n, dtype=float)
    rr = radius * np.sqrt((i + 0.5) / n)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    th = golden * i
    return np.stack([c[0] + rr * np.cos(th), c[1] + rr * np.sin(th)], axis=-1)


def advect_patches(field, patches: list[PatchSpec], t0: float, t_a: float,
                   spec: StepSpec = StepSpec(),
                   snapshot_times: list[float] | None = None) -> dict:
    """Advect disk patches and record positions at requested times.

    Snapshot times are snapped to the nearest step boundary of the advection
    (bounded by dt/2); t0 itself is always available. Returns a dict of
    label -> {"times": [...], "positions": (n_snapshots, n, 2),
    "centroids": (n_snapshots, 2)}.
    """
    if t_a == 0:
        raise ValueError("advection time must be nonzero")
    n_full, rem = plan_steps(t_a, spec.dt)
    h = math.copysign(spec.dt, t_a)
    stepper = _stepper(spec.scheme)
    stamps = np.concatenate([t0 + np.arange(n_full + 1) * h,
                             [t0 + t_a] if rem else []])
    wanted = [t0 + t_a] if snapshot_times is None else list(snapshot_times)
    snap_idx = [int(np.argmin(np.abs(stamps - t))) for t in wanted]

    out = {}
    for patch in patches:
        pts = sunflower_disk(patch.center, patch.radius, patch.n_particles)
        x = pts.copy()
        snaps = {k: None for k in snap_idx}
        if 0 in snaps:
            snaps[0] = x.copy()
        for k in range(n_full):
            x = stepper(field, x, t0 + k * h, h)
            if k + 1 in snaps:
                snaps[k + 1] = x.copy()
        if rem:
            x = stepper(field, x, t0 + n_full * h, math.copysign(rem, t_a))
            if n_full + 1 in snaps:
                snaps[n_full + 1] = x.copy()
        if not np.all(np.isfinite(x)):
            raise ValueError(f"patch '{patch.label}' produced non-finite particles")
        positions = np.stack([snaps[k] for k in snap_idx])
        out[patch.label] = {"times": [float(stamps[k]) for k in snap_idx],
                            "positions": positions,
                            "centroids": positions.mean(axis=1)}
    return out


def field_distance(a: ScalarField, b: ScalarField) -> float:
    """RMS difference over jointly valid nodes."""
    if a.grid != b.grid:
        raise ValueError("field distance requires identical grids")
    both = a.mask & b.mask
    if not both.any():
        raise ValueError("fields share no valid nodes")
    d = a.values[both] - b.values[both]
    return float(np.sqrt(np.mean(d * d)))


def ridge_centroid_x(sigma: ScalarField, percentile: float) -> float:
    """x-coordinate of the sigma-weighted centroid of the ridge mask."""
    ridge = extract_ridges(sigma, percentile)
    if not ridge.any():
        raise ValueError("ridge mask is empty")
    xs = sigma.grid.nodes()[..., 0]
    w = sigma.values[ridge]
    total = float(w.sum())
    if total == 0:
        raise ValueError("ridge weights sum to zero")
    return float((w * xs[ridge]).sum() / total)


def interior_sigma_argmax(sigma: ScalarField, margin: float) -> tuple[int, int]:
    """Node index (iy, ix) of the largest valid sigma at least `margin`
    from every domain edge."""
    nodes = sigma.grid.nodes()
    dom = sigma.grid.domain
    inside = ((nodes[..., 0] >= dom.x_min + margin) & (nodes[..., 0] <= dom.x_max - margin)
              & (nodes[..., 1] >= dom.y_min + margin) & (nodes[..., 1] <= dom.y_max - margin))
    eligible = sigma.mask & inside
    if not eligible.any():
        raise ValueError("no valid interior nodes at this margin")
    vals = np.where(eligible, sigma.values, -np.inf)
    flat = int(np.argmax(vals))
    return flat // sigma.grid.nx, flat % sigma.grid.nx


def interior_low_sigma_node(sigma: ScalarField, margin: float) -> tuple[int, int]:
    """Node index of the smallest valid interior sigma; guaranteed to sit
    below the field's median by construction (callers may still assert)."""
    nodes = sigma.grid.nodes()
    dom = sigma.grid.domain
    inside = ((nodes[..., 0] >= dom.x_min + margin) & (nodes[..., 0] <= dom.x_max - margin)
              & (nodes[..., 1] >= dom.y_min + margin) & (nodes[..., 1] <= dom.y_max - margin))
    eligible = sigma.mask & inside
    if not eligible.any():
        raise ValueError("no valid interior nodes at this margin")
    vals = np.where(eligible, sigma.values, np.inf)
    flat = int(np.argmin(vals))
    return flat // sigma.grid.nx, flat % sigma.grid.nx


def straddle_offsets(sigma: ScalarField, node: tuple[int, int], offset: float,
                     ridge_percentile: float = 0.95
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Two centers at +-offset from the node, placed to land on opposite
    sides of the local ridge.

    The cross-ridge direction is the normal to the ridge tangent, estimated
    by a principal-axis fit of the ridge-mask nodes within `offset` of the
    node. Fitting at the offset length scale matters: one-node derivative
    stencils feel the sub-grid position of the crest and can tilt the pair
    far enough that one disk is cut by the barrier instead of cleared past
    it. Off the ridge (too few mask nodes nearby, or no dominant axis) the
    direction falls back to the local sigma gradient, and for a flat field
    to +y."""
    iy, ix = node
    p = sigma.grid.nodes()[iy, ix]
    n = None

    nodes = sigma.grid.nodes()
    ridge = extract_ridges(sigma, ridge_percentile)
    near = ridge & (np.hypot(nodes[..., 0] - p[0], nodes[..., 1] - p[1]) <= offset)
    if near.sum() >= 3:
        pts = nodes[near]
        centered = pts - pts.mean(axis=0)
        w, v = np.linalg.eigh(centered.T @ centered / pts.shape[0])
        if w[1] > 0 and w[1] >= 4.0 * w[0]:  # 2x in std dev: a real axis
            t = v[:, 1]
            n = np.array([-t[1], t[0]])

    if n is None:
        V = np.where(sigma.mask, sigma.values, np.nan)
        dy, dx = np.gradient(V, sigma.grid.spacing_y, sigma.grid.spacing_x,
                             edge_order=1)
        g = np.array([dx[iy, ix], dy[iy, ix]])
        norm = float(np.hypot(g[0], g[1]))
        if np.isfinite(norm) and norm >= 1e-14:
            n = g / norm
        else:
            n = np.array([0.0, 1.0])
    return p + offset * n, p - offset * n
