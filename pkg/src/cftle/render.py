"""Grayscale heatmap emission as binary PGM (P5, 8-bit).

One pixel per grid node, y axis up (image row 0 holds y_max). Valid values
map linearly onto 0..255 over [vmin, vmax]; a degenerate range maps to
mid-gray 128 instead of erroring (constant fields occur in trivial runs).
Invalid nodes render black; an optional ridge mask burns to white after
the base mapping. Identical inputs give identical bytes.
"""

from __future__ import annotations

import numpy as np

from .grids import ScalarField
from .serialization import atomic_write_bytes


def render_pgm(field: ScalarField, vmin: float | None = None,
               vmax: float | None = None, ridge_mask: np.ndarray | None = None) -> bytes:
    values = field.values
    mask = field.mask
    if mask.any():
        lo = float(np.min(values[mask])) if vmin is None else float(vmin)
        hi = float(np.max(values[mask])) if vmax is None else float(vmax)
    else:
        lo, hi = 0.0, 0.0
    img = np.zeros(values.shape, dtype=np.uint8)
    rng = hi - lo
    if np.isfinite(rng) and rng > 0:
        with np.errstate(invalid="ignore"):
            scaled = np.clip(np.rint(255.0 * (values - lo) / rng), 0.0, 255.0)
        img[mask] = scaled[mask].astype(np.uint8)
    else:
        img[mask] = 128
    if ridge_mask is not None:
        if ridge_mask.shape != img.shape:
            raise ValueError("ridge mask shape does not match the field")
        img[np.asarray(ridge_mask, dtype=bool)] = 255
    img = img[::-1, :]  # row 0 = top of the picture = y_max
    header = f"P5\n{field.grid.nx} {field.grid.ny}\n255\n".encode()
    return header + img.tobytes()


def write_pgm(path: str, field: ScalarField, vmin: float | None = None,
              vmax: float | None = None, ridge_mask: np.ndarray | None = None) -> None:
    atomic_write_bytes(path, render_pgm(field, vmin, vmax, ridge_mask))
