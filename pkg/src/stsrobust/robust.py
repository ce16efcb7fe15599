"""Induced-gain robustness analysis of the LQR closed loop.

Constant parameter deviations are modelled as the output of a bank of
first-order lags driven by an L2 signal ``d``. The closed loop, extended with
those lags, is an LTV system from ``d`` to the weighted deviation ``e`` of
the task outputs. Its finite-horizon L2-to-Euclidean gain at time ``T`` is

    gamma(T) = sqrt(lambda_max(Cbar(T) W(T) Cbar(T)^T))

with ``W`` the controllability Gramian, ``dW/dt = Abar W + W Abar^T + Bbar Bbar^T``,
``W(0) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .linearizer import LtvSystem
from .lqr import GainSchedule, LqrWeights
from .model import ParameterBox
from .numerics import MAX_SUBSTEPS, DivergenceError, spectral_radii, substep_counts

DEFAULT_BANDWIDTH = 100 * np.pi
DEFAULT_OUTPUT_WEIGHTS = (1.0, 1.0, 1.0, 10.0, 10.0, 10.0)
GRAMIAN_LIMIT = 1e15


@dataclass(frozen=True)
class ParameterFilter:
    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    a: float

    @property
    def dc_gain(self) -> np.ndarray:
        return self.C_d @ np.linalg.solve(-self.A_d, self.B_d)


def build_parameter_filter(box: ParameterBox, a: float = DEFAULT_BANDWIDTH) -> ParameterFilter:
    """Lag bank ``eta' = -a eta + d``, ``dp = a diag(half-widths) eta``."""
    if not a > 0:
        raise ValueError("filter bandwidth must be positive")
    n = 12
    half = (box.p_max - box.p_min) / 2.0
    return ParameterFilter(A_d=-a * np.eye(n), B_d=np.eye(n), C_d=a * np.diag(half), a=float(a))


@dataclass
class ExtendedLtv:
    times: np.ndarray
    Abar: np.ndarray  # (N, 18, 18)
    Bbar: np.ndarray  # (N, 18, 12)
    Cbar: np.ndarray  # (N, 6, 18)
    W_e: tuple
    # Spectral radius of Abar per grid point (block-triangular: max of the blocks).
    rates: Optional[np.ndarray] = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def index_of(self, T: float) -> int:
        """Grid index nearest to ``T``."""
        if not 0 < T <= self.times[-1] + 1e-9:
            raise ValueError(f"horizon {T} outside (0, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - T)))


def assemble_extended_ltv(ltv: LtvSystem, K: GainSchedule, filt: ParameterFilter,
                          W_e: Sequence[float] = DEFAULT_OUTPUT_WEIGHTS) -> ExtendedLtv:
    if K.K.shape[0] != len(ltv.times) or not np.allclose(K.times, ltv.times, rtol=0, atol=1e-12):
        raise ValueError("gain schedule and LTV system are on different grids")
    W_e = np.asarray(W_e, dtype=float)
    if W_e.shape != (6,) or np.any(W_e <= 0):
        raise ValueError("W_e needs 6 positive diagonal entries")
    n = len(ltv.times)
    nx, nd = 6, filt.A_d.shape[0]

    Acl = ltv.A - ltv.B2 @ K.K
    Abar = np.zeros((n, nx + nd, nx + nd))
    Abar[:, :nx, :nx] = Acl
    Abar[:, :nx, nx:] = ltv.B1 @ filt.C_d
    Abar[:, nx:, nx:] = filt.A_d
    # The filter has no feedthrough, so d enters only through the lag states.
    Bbar = np.zeros((n, nx + nd, nd))
    Bbar[:, nx:, :] = filt.B_d
    Cbar = np.concatenate([W_e[None, :, None] * ltv.C,
                           W_e[None, :, None] * (ltv.D1 @ filt.C_d)], axis=2)

    rho_cl = K.rates if K.rates is not None else spectral_radii(Acl)
    rho_d = float(np.abs(np.linalg.eigvals(filt.A_d)).max())
    rates = np.maximum(rho_cl, rho_d)
    return ExtendedLtv(times=np.asarray(ltv.times), Abar=Abar, Bbar=Bbar, Cbar=Cbar,
                       W_e=tuple(W_e), rates=rates)


@njit(cache=True)
def _lyap_rhs(W, A, B):
    AW = A @ W
    return AW + AW.T + B @ B.T


@njit(cache=True)
def _gramian_forward(Abar, Bbar, dt, substeps, stop, limit):
    nz = Abar.shape[1]
    out = np.zeros((stop + 1, nz, nz))
    W = np.zeros((nz, nz))
    for k in range(stop):
        A_lo, A_hi = Abar[k], Abar[k + 1]
        B_lo, B_hi = Bbar[k], Bbar[k + 1]
        m = substeps[k]
        h = dt / m
        for j in range(m):
            s0 = j / m
            sm = (j + 0.5) / m
            s1 = (j + 1.0) / m
            A0 = A_lo + (A_hi - A_lo) * s0
            Am = A_lo + (A_hi - A_lo) * sm
            A1 = A_lo + (A_hi - A_lo) * s1
            B0 = B_lo + (B_hi - B_lo) * s0
            Bm = B_lo + (B_hi - B_lo) * sm
            B1 = B_lo + (B_hi - B_lo) * s1
            k1 = _lyap_rhs(W, A0, B0)
            k2 = _lyap_rhs(W + 0.5 * h * k1, Am, Bm)
            k3 = _lyap_rhs(W + 0.5 * h * k2, Am, Bm)
            k4 = _lyap_rhs(W + h * k3, A1, B1)
            W = W + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            W = 0.5 * (W + W.T)
        if not np.all(np.isfinite(W)) or np.max(np.abs(W)) > limit:
            return out, 1
        out[k + 1] = W
    return out, 0


def controllability_gramian(ext: ExtendedLtv, T: float, refine: int = 1) -> np.ndarray:
    """Gramians ``W(t_k)`` for every grid point up to the one nearest ``T``."""
    stop = ext.index_of(T)
    rates = ext.rates if ext.rates is not None else spectral_radii(ext.Abar)
    # The Lyapunov operator's eigenvalues are pairwise sums, hence the factor 2.
    m = substep_counts(2.0 * rates[: stop + 1], ext.dt, refine)
    if m.sum() > MAX_SUBSTEPS * refine:
        raise DivergenceError("Gramian integration exceeded its substep budget (too stiff)")
    W, status = _gramian_forward(np.ascontiguousarray(ext.Abar), np.ascontiguousarray(ext.Bbar),
                                 ext.dt, m, stop, GRAMIAN_LIMIT)
    if status:
        raise DivergenceError("controllability Gramian became non-finite")
    return W


def gain_from_gramian(Cbar_T: np.ndarray, W_T: np.ndarray) -> float:
    M = Cbar_T @ W_T @ Cbar_T.T
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
    return float(np.sqrt(max(lam, 0.0)))


def induced_gains(ext: ExtendedLtv, horizons: Sequence[float], refine: int = 1) -> list:
    """L2-to-Euclidean gains for several horizons from one Gramian pass."""
    idx = [ext.index_of(T) for T in horizons]
    W = controllability_gramian(ext, ext.times[max(idx)], refine)
    return [gain_from_gramian(ext.Cbar[i], W[i]) for i in idx]


def l2_to_euclidean_gain(ext: ExtendedLtv, T: float, refine: int = 1) -> float:
    return induced_gains(ext, [T], refine)[0]


def robust_metric(gamma_tm: float, gamma_tf: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if gamma_tm < 0 or gamma_tf < 0:
        raise ValueError("induced gains are nonnegative")
    return (1.0 - alpha) * gamma_tm + alpha * gamma_tf


@dataclass(frozen=True)
class GainReport:
    gamma_tm: float
    gamma_tf: float
    alpha: float
    t_m: float
    t_f: float
    J_RP: float
    weights: Optional[LqrWeights] = None

    def to_dict(self) -> dict:
        d = {
            "gamma_tm": self.gamma_tm,
            "gamma_tf": self.gamma_tf,
            "alpha": self.alpha,
            "t_m": self.t_m,
            "t_f": self.t_f,
            "J_RP": self.J_RP,
        }
        if self.weights is not None:
            d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "GainReport":
        w = LqrWeights.from_dict(d["weights"]) if "weights" in d else None
        return cls(d["gamma_tm"], d["gamma_tf"], d["alpha"], d["t_m"], d["t_f"], d["J_RP"], w)


def evaluate_gain_schedule(ltv: LtvSystem, gains: GainSchedule, filt: ParameterFilter,
                           W_e=DEFAULT_OUTPUT_WEIGHTS, alpha: float = 0.7,
                           t_m: float = 2.0) -> GainReport:
    ext = assemble_extended_ltv(ltv, gains, filt, W_e)
    t_f = float(ltv.times[-1])
    g_m, g_f = induced_gains(ext, [t_m, t_f])
    return GainReport(g_m, g_f, alpha, t_m, t_f, robust_metric(g_m, g_f, alpha), gains.weights)
