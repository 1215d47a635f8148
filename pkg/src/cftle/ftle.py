"""Finite-time Lyapunov exponent fields from flow maps, plus ridge masks.

The exponent at a node is sigma = ln(s_max) / |T_A| where s_max is the
largest singular value of the finite-difference flow-map Jacobian. s_max is
computed in closed form rather than by eigensolving the squared tensor,
which would double the condition number; agreement of the two routes is a
tested invariant, not an assumption.
"""

from __future__ import annotations

import numpy as np

from .grids import GridSpec, ScalarField, VectorField
from .integrate import StepSpec, flow_map_grid


def flow_map_jacobian(flow_map: VectorField) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference Jacobian of the flow map on its grid.

    Interior nodes get central differences (endpoint differences over the
    two-node initial spacing); edges get one-sided first-order differences.
    Returns (J, mask) with J shaped (ny, nx, 2, 2). A node is masked
    invalid when any node in its difference stencil is invalid; NaN
    propagation through np.gradient implements exactly that.
    """
    grid = flow_map.grid
    sx = grid.spacing_x
    sy = grid.spacing_y
    if not (sx > 0 and sy > 0):
        raise ValueError("degenerate grid spacing")
    V = np.where(flow_map.mask[..., None], flow_map.values, np.nan)
    dXdy, dXdx = np.gradient(V[..., 0], sy, sx, edge_order=1)
    dYdy, dYdx = np.gradient(V[..., 1], sy, sx, edge_order=1)
    J = np.empty((grid.ny, grid.nx, 2, 2))
    J[..., 0, 0] = dXdx
    J[..., 0, 1] = dXdy
    J[..., 1, 0] = dYdx
    J[..., 1, 1] = dYdy
    # the central stencil at a node does not read the node itself, so an
    # invalid node can still get a finite J; it must stay masked regardless
    mask = np.all(np.isfinite(J), axis=(-2, -1)) & flow_map.mask
    return J, mask


def max_singular_value_2x2(J: np.ndarray) -> np.ndarray:
    """Largest singular value of (...,2,2) matrices, closed form.

    With m = |[a+d, b-c]| and n = |[a-d, b+c]| the singular values are
    (m+n)/2 and |m-n|/2; hypot keeps the squares from overflowing.
    """
    J = np.asarray(J, dtype=float)
    a = J[..., 0, 0]
    b = J[..., 0, 1]
    c = J[..., 1, 0]
    d = J[..., 1, 1]
    m = np.hypot(a + d, b - c)
    n = np.hypot(a - d, b + c)
    return 0.5 * (m + n)


def sigma_from_jacobian(J: np.ndarray, t_a: float) -> np.ndarray:
    """Exponent values; rank-deficient maps give -inf (callers mask them)."""
    if t_a == 0:
        raise ValueError("advection time must be nonzero")
    s_max = max_singular_value_2x2(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(s_max) / abs(t_a)


def ftle_field(field, grid: GridSpec, t0: float, t_a: float,
               spec: StepSpec = StepSpec(), threads: int = 1) -> ScalarField:
    """Full pipeline: advect grid, difference the map, take the exponent.

    Negative T_A integrates backward and yields the attracting-structure
    field. sigma can be negative near boundaries (one-sided stencils) and
    for compressive maps; only finiteness is guaranteed on valid nodes.
    """
    fmap = flow_map_grid(field, grid, t0, t_a, spec, threads=threads)
    return ftle_from_flow_map(fmap, t_a)


def ftle_from_flow_map(fmap: VectorField, t_a: float) -> ScalarField:
    J, jmask = flow_map_jacobian(fmap)
    values = sigma_from_jacobian(J, t_a)
    mask = jmask & np.isfinite(values)
    return ScalarField(grid=fmap.grid, values=values, mask=mask)


def extract_ridges(sigma: ScalarField, percentile: float) -> np.ndarray:
    """Boolean mask of nodes at or above the given quantile of valid sigma.

    The threshold is closed (>=) so constant fields mark every valid node;
    that keeps the rule deterministic on plateaus at any resolution.
    """
    if not (0.0 < percentile < 1.0):
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    valid = sigma.valid_values()
    if valid.size == 0:
        raise ValueError("cannot extract ridges from an all-invalid field")
    threshold = np.quantile(valid, percentile)
    with np.errstate(invalid="ignore"):
        return sigma.mask & (sigma.values >= threshold)
