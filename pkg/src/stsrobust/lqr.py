"""Finite-horizon LQR: backward Riccati integration and the gain schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .linearizer import LtvSystem
from .numerics import (
    MAX_SUBSTEPS,
    STEP_LIMIT,
    DivergenceError,
    interp_grid,
    spectral_radii,
)
from .planner import read_csv, write_csv

P_LIMIT = 1e12


@dataclass(frozen=True)
class LqrWeights:
    """Diagonals of the state, input and terminal weights."""

    q: tuple
    r: tuple
    s: tuple

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if q.shape != (6,) or r.shape != (4,) or s.shape != (6,):
            raise ValueError("weights need 6 (Q), 4 (R) and 6 (S) diagonal entries")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r)) and np.all(np.isfinite(s))):
            raise ValueError("weights must be finite")
        if np.any(q < 0) or np.any(s < 0):
            raise ValueError("Q and S must be positive semidefinite")
        if np.any(r <= 0):
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "q", tuple(float(v) for v in q))
        object.__setattr__(self, "r", tuple(float(v) for v in r))
        object.__setattr__(self, "s", tuple(float(v) for v in s))

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r)

    @property
    def S(self) -> np.ndarray:
        return np.diag(self.s)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.r, self.s])

    @classmethod
    def from_vector(cls, v) -> "LqrWeights":
        v = np.asarray(v, dtype=float)
        return cls(q=v[:6], r=v[6:10], s=v[10:16])

    def to_dict(self) -> dict:
        return {"Q": list(self.q), "R": list(self.r), "S": list(self.s)}

    @classmethod
    def from_dict(cls, d) -> "LqrWeights":
        return cls(q=d["Q"], r=d["R"], s=d["S"])


@dataclass
class GainSchedule:
    times: np.ndarray
    K: np.ndarray  # (N, 4, 6)
    weights: Optional[LqrWeights] = None
    # Spectral radius of A - B2 K at each grid point, used to pick RK4 substeps.
    rates: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.K.shape != (len(self.times), 4, 6):
            raise ValueError(f"K has shape {self.K.shape}")
        if not np.all(np.isfinite(self.K)):
            raise ValueError("gain schedule has non-finite entries")

    def at(self, t: float) -> np.ndarray:
        return interp_grid(self.times, self.K, t)

    CSV_HEADER = ("t",) + tuple(f"K_{i}_{j}" for i in range(4) for j in range(6))
    RATE_COLUMN = "closed_loop_rate"

    def to_csv(self, path) -> None:
        cols = [self.times, self.K.reshape(len(self.times), 24)]
        header = self.CSV_HEADER
        if self.rates is not None:
            cols.append(self.rates)
            header = header + (self.RATE_COLUMN,)
        write_csv(path, header, np.column_stack(cols))

    @classmethod
    def from_csv(cls, path, weights: Optional[LqrWeights] = None) -> "GainSchedule":
        header, table = read_csv(path)
        header = tuple(header)
        rates = None
        if header == cls.CSV_HEADER + (cls.RATE_COLUMN,):
            rates = table[:, -1]
        elif header != cls.CSV_HEADER:
            raise ValueError(f"{path}: unexpected gain columns")
        return cls(times=table[:, 0], K=table[:, 1:25].reshape(-1, 4, 6), weights=weights, rates=rates)

    @classmethod
    def zeros(cls, times) -> "GainSchedule":
        return cls(times=np.asarray(times, dtype=float), K=np.zeros((len(times), 4, 6)))


@njit(cache=True)
def _riccati_rhs(P, A, G, Q):
    # Derivative in reversed time sigma = t_f - t.
    PA = P @ A
    return PA + PA.T - P @ G @ P + Q


@njit(cache=True)
def _riccati_backward(A, G, q, s, dt, step_limit, max_steps, p_limit):
    n = A.shape[0]
    nx = A.shape[1]
    out = np.zeros((n, nx, nx))
    Q = np.diag(q)
    P = np.diag(s).copy()
    out[n - 1] = P
    total = 0
    for k in range(n - 1, 0, -1):
        A_hi, A_lo = A[k], A[k - 1]
        G_hi, G_lo = G[k], G[k - 1]
        # Stiffness of the linearized Riccati flow: pairwise sums of closed-loop poles.
        rho = np.max(np.abs(np.linalg.eigvals((A_hi - G_hi @ P).astype(np.complex128))))
        m = max(1, int(np.ceil(2.0 * rho * dt / step_limit)))
        total += m
        if total > max_steps:
            return out, 2
        h = dt / m
        for j in range(m):
            s0 = j / m
            sm = (j + 0.5) / m
            s1 = (j + 1.0) / m
            A0 = A_hi + (A_lo - A_hi) * s0
            Am = A_hi + (A_lo - A_hi) * sm
            A1 = A_hi + (A_lo - A_hi) * s1
            G0 = G_hi + (G_lo - G_hi) * s0
            Gm = G_hi + (G_lo - G_hi) * sm
            G1 = G_hi + (G_lo - G_hi) * s1
            k1 = _riccati_rhs(P, A0, G0, Q)
            k2 = _riccati_rhs(P + 0.5 * h * k1, Am, Gm, Q)
            k3 = _riccati_rhs(P + 0.5 * h * k2, Am, Gm, Q)
            k4 = _riccati_rhs(P + h * k3, A1, G1, Q)
            P = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            P = 0.5 * (P + P.T)
            if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > p_limit:
                return out, 1
        out[k - 1] = P
    return out, 0


def riccati_backward(times, A, B2, q, r, s, refine: int = 1) -> np.ndarray:
    """Riccati solution on a uniform grid for arbitrary state/input sizes.

    ``A`` is ``(N, n, n)``, ``B2`` is ``(N, n, m)``; ``q``, ``r``, ``s`` are
    the weight diagonals.
    """
    times = np.asarray(times, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    B2 = np.asarray(B2, dtype=float)
    r_inv = 1.0 / np.asarray(r, dtype=float)
    G = np.ascontiguousarray((B2 * r_inv) @ B2.transpose(0, 2, 1))
    dt = float(times[1] - times[0])
    P, status = _riccati_backward(
        A, G, np.asarray(q, dtype=float), np.asarray(s, dtype=float), dt,
        STEP_LIMIT / refine, MAX_SUBSTEPS * refine, P_LIMIT,
    )
    if status == 1:
        raise DivergenceError(f"Riccati solution exceeded {P_LIMIT:g}")
    if status == 2:
        raise DivergenceError("Riccati integration exceeded its substep budget (too stiff)")
    return P


def solve_riccati(ltv: LtvSystem, w: LqrWeights, refine: int = 1) -> np.ndarray:
    """Integrate the Riccati differential equation backward from ``P(t_f) = S``.

    RK4 runs in reversed time with ``A`` and ``B2 R^-1 B2^T`` interpolated
    linearly between grid points. Each grid interval is split into substeps
    sized by the current closed-loop stiffness, so large terminal weights do
    not destabilise the integration. ``refine`` only exists for convergence
    tests.
    """
    return riccati_backward(ltv.times, ltv.A, ltv.B2, w.q, w.r, w.s, refine)


def lqr_gain(P: np.ndarray, ltv: LtvSystem, w: LqrWeights) -> GainSchedule:
    """``K(t) = R^-1 B2(t)^T P(t)`` on the grid, plus closed-loop stiffness rates."""
    r_inv = 1.0 / np.asarray(w.r)
    K = r_inv[None, :, None] * np.einsum("nij,njk->nik", ltv.B2.transpose(0, 2, 1), P)
    rates = spectral_radii(ltv.A - ltv.B2 @ K)
    return GainSchedule(times=np.asarray(ltv.times), K=K, weights=w, rates=rates)


def closed_loop_rates(ltv: LtvSystem, gains: GainSchedule) -> np.ndarray:
    return spectral_radii(ltv.A - ltv.B2 @ gains.K)


def design_gain(ltv: LtvSystem, w: LqrWeights) -> GainSchedule:
    return lqr_gain(solve_riccati(ltv, w), ltv, w)
