"""Shared numerical helpers for the fixed-grid RK4 integrators."""

from __future__ import annotations

import numpy as np

# Largest RK4 substep, as a multiple of 1 / (stiffness rate). Keeps every
# linear mode well inside the RK4 stability interval (-2.78, 0).
STEP_LIMIT = 1.0
# Total substep budget per integration; beyond it the problem is treated as
# numerically divergent rather than ground through.
MAX_SUBSTEPS = 2_000_000


class DivergenceError(ArithmeticError):
    """An integration blew past its magnitude limit or its step budget."""


def substep_counts(rates, dt: float, refine: int = 1) -> np.ndarray:
    """RK4 substeps per grid interval given stiffness rates at the grid points.

    Each interval uses the larger of its two endpoint rates.
    """
    rates = np.asarray(rates, dtype=float)
    worst = np.maximum(rates[:-1], rates[1:])
    m = np.ceil(worst * dt / STEP_LIMIT).astype(np.int64)
    return np.maximum(m, 1) * int(refine)


def spectral_radii(mats) -> np.ndarray:
    """Largest eigenvalue magnitude of each matrix in a stack."""
    return np.abs(np.linalg.eigvals(mats)).max(axis=-1)


def interp_grid(times, values, t):
    """Linear interpolation of stacked arrays sampled on a uniform grid."""
    times = np.asarray(times)
    n = len(times)
    dt = (times[-1] - times[0]) / (n - 1)
    pos = (t - times[0]) / dt
    k = int(np.clip(np.floor(pos), 0, n - 2))
    s = pos - k
    return (1.0 - s) * values[k] + s * values[k + 1]
