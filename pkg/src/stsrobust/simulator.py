"""Closed-loop simulation of the nonlinear robot and Monte Carlo evaluation."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .lqr import GainSchedule
from .model import PARAMETER_NAMES, ParameterBox, _dynamics, _task_outputs
from .numerics import DivergenceError, substep_counts
from .planner import ReferenceTrajectory, write_csv

STATE_LIMIT = 1e6
X_COM_TOL = 0.005  # m
SPEED_TOL = 0.01  # m/s


@dataclass
class SimulationResult:
    times: np.ndarray
    x: np.ndarray  # (N, 6)
    u: np.ndarray  # (N, 4)
    zeta: np.ndarray  # (N, 6)
    p: np.ndarray  # (12,)

    @property
    def final_x_com(self) -> float:
        return float(self.zeta[-1, 1])

    @property
    def final_com_speed(self) -> float:
        return float(np.hypot(self.zeta[-1, 4], self.zeta[-1, 5]))


@njit(cache=True)
def _lqr_input(x, xb, ub, K):
    return ub - K @ (x - xb)


@njit(cache=True)
def _closed_loop(x0, p, x_bar, u_bar, K, dt, substeps, limit):
    n = x_bar.shape[0]
    xs = np.full((n, 6), np.nan)
    us = np.full((n, 4), np.nan)
    x = x0.copy()
    xs[0] = x
    us[0] = _lqr_input(x, x_bar[0], u_bar[0], K[0])
    for k in range(n - 1):
        m = substeps[k]
        h = dt / m
        for j in range(m):
            s0 = j / m
            sm = (j + 0.5) / m
            s1 = (j + 1.0) / m
            xb0 = x_bar[k] + (x_bar[k + 1] - x_bar[k]) * s0
            xbm = x_bar[k] + (x_bar[k + 1] - x_bar[k]) * sm
            xb1 = x_bar[k] + (x_bar[k + 1] - x_bar[k]) * s1
            ub0 = u_bar[k] + (u_bar[k + 1] - u_bar[k]) * s0
            ubm = u_bar[k] + (u_bar[k + 1] - u_bar[k]) * sm
            ub1 = u_bar[k] + (u_bar[k + 1] - u_bar[k]) * s1
            K0 = K[k] + (K[k + 1] - K[k]) * s0
            Km = K[k] + (K[k + 1] - K[k]) * sm
            K1 = K[k] + (K[k + 1] - K[k]) * s1
            k1, ok1 = _dynamics(x, p, _lqr_input(x, xb0, ub0, K0))
            xa = x + 0.5 * h * k1
            k2, ok2 = _dynamics(xa, p, _lqr_input(xa, xbm, ubm, Km))
            xa = x + 0.5 * h * k2
            k3, ok3 = _dynamics(xa, p, _lqr_input(xa, xbm, ubm, Km))
            xa = x + h * k3
            k4, ok4 = _dynamics(xa, p, _lqr_input(xa, xb1, ub1, K1))
            if not (ok1 and ok2 and ok3 and ok4):
                return xs, us, k + 1
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
            return xs, us, k + 1
        xs[k + 1] = x
        us[k + 1] = _lqr_input(x, x_bar[k + 1], u_bar[k + 1], K[k + 1])
    return xs, us, -1


def simulate_closed_loop(x0, p, traj: ReferenceTrajectory, K: GainSchedule,
                         refine: int = 1, substeps: Optional[np.ndarray] = None) -> SimulationResult:
    """Integrate ``x' = f(x, p, u_bar - K (x - x_bar))`` over the reference grid.

    RK4 with ``x_bar``, ``u_bar`` and ``K`` interpolated linearly inside each
    grid interval. Intervals where the closed loop is stiff (known from
    ``K.rates``) are split into substeps.
    """
    if K.K.shape[0] != len(traj) or not np.allclose(K.times, traj.times, rtol=0, atol=1e-12):
        raise ValueError("gain schedule and reference are on different grids")
    x0 = np.ascontiguousarray(x0, dtype=float)
    p = np.ascontiguousarray(p, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    if substeps is None:
        if K.rates is not None:
            substeps = substep_counts(K.rates, traj.dt, refine)
        else:
            substeps = np.full(len(traj) - 1, int(refine), dtype=np.int64)
    xs, us, failed = _closed_loop(
        x0, p, np.ascontiguousarray(traj.x_bar), np.ascontiguousarray(traj.u_bar),
        np.ascontiguousarray(K.K), traj.dt, np.asarray(substeps, dtype=np.int64), STATE_LIMIT,
    )
    if failed >= 0:
        raise DivergenceError(f"closed-loop simulation diverged near t={traj.times[failed]:.4f}s")
    zeta = np.array([_task_outputs(x, p) for x in xs])
    return SimulationResult(times=np.asarray(traj.times), x=xs, u=us, zeta=zeta, p=p)


def sample_parameters(box: ParameterBox, n: int, seed: int) -> list:
    """Uniform draws from the box; each ``lc`` is drawn around half its drawn ``l``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    unit = rng.random((n, 12))
    lo, hi = box.p_min, box.p_max
    hw = np.asarray(box.half_widths)
    draws = lo + unit * (hi - lo)
    draws[:, 9:12] = 0.5 * draws[:, 6:9] + hw[9:12] * (2.0 * unit[:, 9:12] - 1.0)
    return [row.copy() for row in draws]


def output_deviation(result: SimulationResult, traj: ReferenceTrajectory, p_nominal,
                     W_e: Sequence[float]) -> float:
    """Weighted final task-output deviation from the nominal reference."""
    ref = _task_outputs(np.ascontiguousarray(traj.x_bar[-1]), np.ascontiguousarray(p_nominal, dtype=float))
    return float(np.linalg.norm(np.asarray(W_e) * (result.zeta[-1] - ref)))


@dataclass
class MonteCarloReport:
    params: np.ndarray  # (n, 12)
    final_x_com_error: np.ndarray  # (n,), NaN when diverged
    final_com_speed: np.ndarray
    max_input_deviation: np.ndarray  # (n, 4)
    final_output_deviation: np.ndarray
    diverged: np.ndarray  # (n,) bool
    x_com_tol: float = X_COM_TOL
    speed_tol: float = SPEED_TOL
    histories: Optional[list] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def x_com_pass(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return ~self.diverged & (self.final_x_com_error <= self.x_com_tol)

    @property
    def speed_pass(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return ~self.diverged & (self.final_com_speed <= self.speed_tol)

    def summary(self) -> dict:
        ok = ~self.diverged
        return {
            "draws": self.n,
            "diverged": int(self.diverged.sum()),
            "x_com_tol_m": self.x_com_tol,
            "speed_tol_m_per_s": self.speed_tol,
            "x_com_pass": int(self.x_com_pass.sum()),
            "speed_pass": int(self.speed_pass.sum()),
            "both_pass": int((self.x_com_pass & self.speed_pass).sum()),
            "x_com_pass_rate": float(self.x_com_pass.mean()),
            "speed_pass_rate": float(self.speed_pass.mean()),
            "max_final_x_com_error": float(np.max(self.final_x_com_error[ok])) if ok.any() else None,
            "max_final_com_speed": float(np.max(self.final_com_speed[ok])) if ok.any() else None,
            "max_input_deviation": [float(v) for v in np.max(self.max_input_deviation[ok], axis=0)]
            if ok.any() else None,
        }

    CSV_HEADER = (("draw",) + PARAMETER_NAMES
                  + ("final_x_com_error", "final_com_speed",
                     "max_dev_tau1", "max_dev_tau2", "max_dev_Fx", "max_dev_Fy",
                     "final_output_deviation", "diverged"))

    def to_csv(self, path) -> None:
        rows = []
        for i in range(self.n):
            rows.append([i, *self.params[i], self.final_x_com_error[i], self.final_com_speed[i],
                         *self.max_input_deviation[i], self.final_output_deviation[i],
                         int(self.diverged[i])])
        write_csv(path, self.CSV_HEADER, rows)


def _run_draw(args):
    traj, K, p, p_nominal, W_e, keep = args
    try:
        res = simulate_closed_loop(traj.x_bar[0], p, traj, K)
    except DivergenceError:
        return None
    metrics = (
        abs(res.final_x_com),
        res.final_com_speed,
        np.max(np.abs(res.u - traj.u_bar), axis=0),
        output_deviation(res, traj, p_nominal, W_e),
    )
    return metrics, (res if keep else None)


def monte_carlo(traj: ReferenceTrajectory, K: GainSchedule, box: ParameterBox, n: int, seed: int,
                W_e: Sequence[float] = (1.0, 1.0, 1.0, 10.0, 10.0, 10.0), workers: int = 1,
                keep_histories: bool = False, draws: Optional[list] = None) -> MonteCarloReport:
    """Simulate the closed loop for ``n`` random parameter draws from ``x_bar(0)``.

    Diverged runs are recorded (NaN metrics, ``diverged`` set), not raised.
    Results are ordered by draw index, so they do not depend on ``workers``.
    """
    if draws is None:
        draws = sample_parameters(box, n, seed)
    p_nom = box.nominal.to_array()
    jobs = [(traj, K, p, p_nom, tuple(W_e), keep_histories) for p in draws]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_draw, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_draw(job) for job in jobs]

    m = len(draws)
    report = MonteCarloReport(
        params=np.array(draws),
        final_x_com_error=np.full(m, np.nan),
        final_com_speed=np.full(m, np.nan),
        max_input_deviation=np.full((m, 4), np.nan),
        final_output_deviation=np.full(m, np.inf),
        diverged=np.zeros(m, dtype=bool),
        histories=[] if keep_histories else None,
    )
    for i, res in enumerate(results):
        if res is None:
            report.diverged[i] = True
            if keep_histories:
                report.histories.append(None)
            continue
        (xe, sp, du, dev), hist = res
        report.final_x_com_error[i] = xe
        report.final_com_speed[i] = sp
        report.max_input_deviation[i] = du
        report.final_output_deviation[i] = dev
        if keep_histories:
            report.histories.append(hist)
    return report
