"""Jacobian linearization of the dynamics and task outputs along a reference."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    _dynamics,
    _force_matrix,
    _lumped,
    _mass_matrix,
    com_jacobian,
    com_jacobian_rate,
)
from .planner import ReferenceTrajectory

FD_STEP = 1e-6


@dataclass
class LtvSystem:
    """Matrices of ``d(dx)/dt = A dx + B1 dp + B2 du`` and ``d(zeta) = C dx + D1 dp``."""

    times: np.ndarray
    A: np.ndarray  # (N, 6, 6)
    B1: np.ndarray  # (N, 6, 12)
    B2: np.ndarray  # (N, 6, 4)
    C: np.ndarray  # (N, 6, 6)
    D1: np.ndarray  # (N, 6, 12)

    def __post_init__(self):
        n = len(self.times)
        expected = {"A": (6, 6), "B1": (6, 12), "B2": (6, 4), "C": (6, 6), "D1": (6, 12)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != (n, *shape):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, *shape)}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def dump(self, directory) -> None:
        """Write one CSV per matrix family: ``t`` then entries in row-major order."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("A", "B1", "B2", "C", "D1"):
            arr = getattr(self, name)
            _, r, c = arr.shape
            header = ["t"] + [f"{name}_{i}_{j}" for i in range(r) for j in range(c)]
            with open(directory / f"ltv_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                for t, m in zip(self.times, arr):
                    writer.writerow([repr(float(t))] + [repr(float(v)) for v in m.ravel()])


def _f(x, p, u):
    xdot, ok = _dynamics(x, p, u)
    if not ok:
        raise ArithmeticError("mass matrix lost positive definiteness during differentiation")
    return xdot


def dynamics_jacobians(x, p, u, step: float = FD_STEP):
    """Partials of the state derivative w.r.t. state, parameters and input.

    State and parameter partials of the acceleration rows use central
    differences with step ``step * max(1, |value|)``. The kinematic rows
    and the input partial are exact: ``theta' = omega`` is linear and the
    dynamics are affine in ``u``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    p = np.ascontiguousarray(p, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)

    A = np.empty((6, 6))
    for i in range(6):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        A[:, i] = (_f(xp, p, u) - _f(xm, p, u)) / (2 * h)
    A[:3] = 0.0
    A[:3, 3:] = np.eye(3)

    B1 = np.empty((6, 12))
    for i in range(12):
        h = step * max(1.0, abs(p[i]))
        pp, pm = p.copy(), p.copy()
        pp[i] += h
        pm[i] -= h
        B1[:, i] = (_f(x, pp, u) - _f(x, pm, u)) / (2 * h)
    B1[:3] = 0.0

    theta = x[:3]
    B2 = np.zeros((6, 4))
    B2[3:] = np.linalg.solve(_mass_matrix(theta, p), _force_matrix(theta, p))
    return A, B1, B2


def _lumped_partials(p):
    """Rows d(k0, k1, k2, k3)/dp, shape (4, 12)."""
    m1, m2, m3 = p[0], p[1], p[2]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    k0 = 1.0 / (m1 + m2 + m3)
    dk = np.zeros((4, 12))
    dk[0, 0:3] = -k0**2
    dk[1, [0, 1, 2, 6, 9]] = [lc1, l1, l1, m2 + m3, m1]
    dk[2, [1, 2, 7, 10]] = [lc2, l2, m3, m2]
    dk[3, [2, 11]] = [lc3, m3]
    return dk


def output_jacobians(x, p):
    """Analytic partials ``(C, D1)`` of the task outputs w.r.t. state and parameters."""
    x = np.ascontiguousarray(x, dtype=float)
    p = np.ascontiguousarray(p, dtype=float)
    theta, omega = x[:3], x[3:]

    J = com_jacobian(theta, p)
    Jd = com_jacobian_rate(theta, omega, p)
    C = np.zeros((6, 6))
    C[0, 1] = 1.0
    C[3, 4] = 1.0
    C[1:3, :3] = J
    C[4:6, :3] = Jd
    C[4:6, 3:] = J

    k0, k1, k2, k3 = _lumped(p)
    phi = np.cumsum(theta)
    phi_dot = np.cumsum(omega)
    c, s = np.cos(phi), np.sin(phi)
    # d(pos, vel)/d(k0..k3): CoM rows are homogeneous of degree one in k0.
    dz_dk = np.zeros((6, 4))
    k = np.array([k1, k2, k3])
    dz_dk[1, 0] = np.sum(k * c)
    dz_dk[2, 0] = np.sum(k * s)
    dz_dk[4, 0] = -np.sum(k * phi_dot * s)
    dz_dk[5, 0] = np.sum(k * phi_dot * c)
    dz_dk[1, 1:] = k0 * c
    dz_dk[2, 1:] = k0 * s
    dz_dk[4, 1:] = -k0 * phi_dot * s
    dz_dk[5, 1:] = k0 * phi_dot * c
    D1 = dz_dk @ _lumped_partials(p)
    return C, D1


def linearize_dynamics(traj: ReferenceTrajectory, p_nominal, step: float = FD_STEP):
    n = len(traj)
    A = np.empty((n, 6, 6))
    B1 = np.empty((n, 6, 12))
    B2 = np.empty((n, 6, 4))
    for k in range(n):
        A[k], B1[k], B2[k] = dynamics_jacobians(traj.x_bar[k], p_nominal, traj.u_bar[k], step)
    return A, B1, B2


def linearize_outputs(traj: ReferenceTrajectory, p_nominal):
    n = len(traj)
    C = np.empty((n, 6, 6))
    D1 = np.empty((n, 6, 12))
    for k in range(n):
        C[k], D1[k] = output_jacobians(traj.x_bar[k], p_nominal)
    return C, D1


def linearize(traj: ReferenceTrajectory, p_nominal, step: float = FD_STEP) -> LtvSystem:
    A, B1, B2 = linearize_dynamics(traj, p_nominal, step)
    C, D1 = linearize_outputs(traj, p_nominal)
    return LtvSystem(times=np.asarray(traj.times, dtype=float), A=A, B1=B1, B2=B2, C=C, D1=D1)
