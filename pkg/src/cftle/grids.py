"""Rectilinear node-registered grids and the fields that live on them.

Conventions used everywhere in this package:

* positions are float64 arrays with the last axis of length 2 (x, y)
* gridded data is stored with shape (ny, nx), C order, so the x index
  varies fastest in memory
* invalid nodes are carried as non-finite entries plus a boolean mask
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned rectangle; bounds are strict (no degenerate boxes)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)
                and np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise ValueError("domain bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"domain requires x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not self.y_min < self.y_max:
            raise ValueError(f"domain requires y_min < y_max, got [{self.y_min}, {self.y_max}]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return ((p[..., 0] >= self.x_min) & (p[..., 0] <= self.x_max)
                & (p[..., 1] >= self.y_min) & (p[..., 1] <= self.y_max))

    def clamp(self, points: np.ndarray) -> np.ndarray:
        """Componentwise projection onto the box."""
        p = np.asarray(points, dtype=float)
        out = np.empty_like(p)
        out[..., 0] = np.clip(p[..., 0], self.x_min, self.x_max)
        out[..., 1] = np.clip(p[..., 1], self.y_min, self.y_max)
        return out

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}

    @staticmethod
    def from_dict(d: dict) -> "DomainBox":
        return DomainBox(float(d["x_min"]), float(d["x_max"]),
                         float(d["y_min"]), float(d["y_max"]))


@dataclass(frozen=True)
class GridSpec:
    """Node-registered uniform grid on a DomainBox.

    nx, ny count nodes, not cells; 3 nodes minimum per axis so central
    differences have at least one interior point.
    """

    domain: DomainBox
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs nx >= 3 and ny >= 3, got {self.nx}x{self.ny}")

    @property
    def spacing_x(self) -> float:
        return self.domain.width / (self.nx - 1)

    @property
    def spacing_y(self) -> float:
        return self.domain.height / (self.ny - 1)

    def xs(self) -> np.ndarray:
        return np.linspace(self.domain.x_min, self.domain.x_max, self.nx)

    def ys(self) -> np.ndarray:
        return np.linspace(self.domain.y_min, self.domain.y_max, self.ny)

    def nodes(self) -> np.ndarray:
        """All node positions, shape (ny, nx, 2)."""
        xx, yy = np.meshgrid(self.xs(), self.ys())
        return np.stack([xx, yy], axis=-1)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "domain": self.domain.to_dict()}


def _check_field_shapes(grid: GridSpec, values: np.ndarray, mask: np.ndarray, ncomp: int):
    want = (grid.ny, grid.nx) if ncomp == 0 else (grid.ny, grid.nx, ncomp)
    if values.shape != want:
        raise ValueError(f"field values shape {values.shape} does not match grid {want}")
    if mask.shape != (grid.ny, grid.nx):
        raise ValueError(f"field mask shape {mask.shape} does not match grid ({grid.ny}, {grid.nx})")


@dataclass
class ScalarField:
    """One float per node plus a validity mask.

    Invalid nodes may hold NaN or -inf in `values`; every masked-valid
    entry is finite (checked on construction).
    """

    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        self.mask = np.asarray(self.mask, dtype=bool)
        _check_field_shapes(self.grid, self.values, self.mask, 0)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("valid nodes must hold finite values")

    def valid_values(self) -> np.ndarray:
        return self.values[self.mask]

    def invalid_fraction(self) -> float:
        return 1.0 - float(self.mask.sum()) / self.mask.size


@dataclass
class VectorField:
    """Per-node 2-vectors (flow-map endpoints, policies sampled on a grid)."""

    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is None:
            self.mask = np.all(np.isfinite(self.values), axis=-1)
        self.mask = np.asarray(self.mask, dtype=bool)
        _check_field_shapes(self.grid, self.values, self.mask, 2)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("valid nodes must hold finite values")
