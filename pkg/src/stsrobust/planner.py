"""Rest-to-rest reference planning in task space and computed-torque allocation."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    com_jacobian,
    com_jacobian_rate,
    com_position,
    generalized_force_matrix,
    bias_forces,
    mass_matrix,
    task_outputs,
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
SINGULAR_DET = 1e-8


class PlanningError(RuntimeError):
    """Base class for failures while building a reference trajectory."""

    index: Optional[int] = None


class UnreachableTarget(PlanningError):
    pass


class SingularConfiguration(PlanningError):
    pass


class AllocationInfeasible(PlanningError):
    pass


@dataclass(frozen=True)
class ManeuverSpec:
    """Boundary values of a sit-to-stand maneuver (angles in radians)."""

    theta0: tuple
    z_final: tuple
    t_f: float = 3.5
    grid_points: int = 701

    def __post_init__(self):
        theta0 = tuple(float(v) for v in self.theta0)
        z_final = tuple(float(v) for v in self.z_final)
        if len(theta0) != 3 or len(z_final) != 3:
            raise ValueError("theta0 and z_final need three entries each")
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise ValueError("grid_points must be an integer >= 2")
        if np.allclose(theta0, (np.pi / 2, 0.0, 0.0), atol=1e-9):
            raise ValueError("theta0 is the vertical (singular) configuration")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "z_final", z_final)
        object.__setattr__(self, "grid_points", int(self.grid_points))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.grid_points)


_STANDING = (np.deg2rad(-5.0), 0.0, 0.974)

STS1 = ManeuverSpec(theta0=tuple(np.deg2rad([90.0, -90.0, 90.0])), z_final=_STANDING)
STS2 = ManeuverSpec(theta0=tuple(np.deg2rad([120.0, -120.0, 110.87])), z_final=_STANDING)


@dataclass(frozen=True)
class AllocationSpec:
    """Diagonal weights and box bounds of the input allocation program."""

    weights: tuple = (1.0, 1.0, 10.0, 1.0)
    u_min: tuple = (-np.inf, -np.inf, -np.inf, 0.0)
    u_max: tuple = (np.inf, np.inf, np.inf, np.inf)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        lo = np.asarray(self.u_min, dtype=float)
        hi = np.asarray(self.u_max, dtype=float)
        if w.shape != (4,) or lo.shape != (4,) or hi.shape != (4,):
            raise ValueError("allocation weights and bounds need 4 entries")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("allocation weights must be positive")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("u_min must not exceed u_max")
        for name, arr in (("weights", w), ("u_min", lo), ("u_max", hi)):
            object.__setattr__(self, name, tuple(float(v) for v in arr))


@dataclass
class ReferenceTrajectory:
    times: np.ndarray
    x_bar: np.ndarray  # (N, 6)
    u_bar: np.ndarray  # (N, 4)
    z_bar: np.ndarray  # (N, 3)
    z_bar_dot: np.ndarray  # (N, 3)
    z_bar_ddot: Optional[np.ndarray] = None  # not stored in CSV
    theta_ddot: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def t_f(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    CSV_HEADER = (
        "t", "theta1", "theta2", "theta3", "omega1", "omega2", "omega3",
        "tau1", "tau2", "Fx", "Fy", "z1", "z2", "z3", "z1_dot", "z2_dot", "z3_dot",
    )

    def to_csv(self, path) -> None:
        table = np.column_stack([self.times, self.x_bar, self.u_bar, self.z_bar, self.z_bar_dot])
        write_csv(path, self.CSV_HEADER, table)

    @classmethod
    def from_csv(cls, path) -> "ReferenceTrajectory":
        header, table = read_csv(path)
        if tuple(header) != cls.CSV_HEADER:
            raise ValueError(f"{path}: unexpected reference columns {header}")
        return cls(
            times=table[:, 0],
            x_bar=table[:, 1:7],
            u_bar=table[:, 7:11],
            z_bar=table[:, 11:14],
            z_bar_dot=table[:, 14:17],
        )


def write_csv(path, header, rows) -> None:
    # repr() round-trips floats exactly, which keeps artifacts byte-stable.
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v)
                             for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def blend_polynomial(t, t_f):
    """Cubic rest-to-rest blend and its first two time derivatives."""
    t = np.asarray(t, dtype=float)
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    if np.any(t < 0.0) or np.any(t > t_f):
        raise ValueError(f"t must lie in [0, {t_f}]")
    s = t / t_f
    phi = -2.0 * s**3 + 3.0 * s**2
    phi_dot = (-6.0 * s**2 + 6.0 * s) / t_f
    phi_ddot = (-12.0 * s + 6.0) / t_f**2
    return phi, phi_dot, phi_ddot


def task_reference(spec: ManeuverSpec, p_nominal):
    """Task-space reference ``(z, z_dot, z_ddot)`` on the maneuver grid."""
    x0 = np.concatenate([spec.theta0, np.zeros(3)])
    z0 = task_outputs(x0, p_nominal)[:3]
    zf = np.asarray(spec.z_final)
    phi, phi_dot, phi_ddot = blend_polynomial(spec.times, spec.t_f)
    dz = zf - z0
    z = z0 + np.outer(phi, dz)
    z[-1] = zf
    return z, np.outer(phi_dot, dz), np.outer(phi_ddot, dz)


def _task_jacobian(theta, p):
    J = np.zeros((3, 3))
    J[0, 1] = 1.0
    J[1:] = com_jacobian(theta, p)
    return J


def _solve_position(z, p, guess):
    """Damped Newton on the CoM equations in (theta1, theta3) with theta2 = z[0]."""
    theta = np.array([guess[0], z[0], guess[2]], dtype=float)
    target = np.asarray(z[1:], dtype=float)
    cols = [0, 2]

    def residual(th):
        return com_position(th, p) - target

    r = residual(theta)
    for _ in range(NEWTON_MAX_ITER + 1):
        J = com_jacobian(theta, p)[:, cols]
        det = np.linalg.det(J)
        if abs(det) < SINGULAR_DET:
            raise SingularConfiguration(f"task Jacobian singular (det={det:.3e}) at theta={theta}")
        if np.linalg.norm(r) <= NEWTON_TOL:
            return theta
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            trial = theta.copy()
            trial[cols] += lam * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < np.linalg.norm(r) or lam < 1e-4:
                break
            lam *= 0.5
        theta, r = trial, r_trial
    raise UnreachableTarget(f"Newton did not converge for z={z} (|r|={np.linalg.norm(r):.3e})")


def task_to_joint(z, z_dot, z_ddot, p_nominal, theta_guess=None):
    """Map task-space references to joint space.

    Accepts either single samples (shape ``(3,)``) or grids (``(N, 3)``).
    On a grid, each Newton solve starts from the previous sample's solution;
    ``theta_guess`` seeds the first one.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    z_dot = np.atleast_2d(np.asarray(z_dot, dtype=float))
    z_ddot = np.atleast_2d(np.asarray(z_ddot, dtype=float))
    p = np.asarray(p_nominal, dtype=float)
    guess = np.asarray(theta_guess if theta_guess is not None else (np.pi / 3, z[0, 0], np.pi / 3),
                       dtype=float)

    n = len(z)
    theta = np.empty((n, 3))
    theta_dot = np.empty((n, 3))
    theta_ddot = np.empty((n, 3))
    for k in range(n):
        try:
            th = _solve_position(z[k], p, guess)
        except PlanningError as err:
            err.index = k
            raise
        J = _task_jacobian(th, p)
        thd = np.linalg.solve(J, z_dot[k])
        Jd = np.zeros((3, 3))
        Jd[1:] = com_jacobian_rate(th, thd, p)
        theta[k], theta_dot[k] = th, thd
        theta_ddot[k] = np.linalg.solve(J, z_ddot[k] - Jd @ thd)
        guess = th
    if single:
        return theta[0], theta_dot[0], theta_ddot[0]
    return theta, theta_dot, theta_ddot


def solve_allocation_qp(A, b, weights, lower, upper):
    """Minimise ``0.5 * ||diag(weights) xi||^2`` s.t. ``A xi = b``, ``lower <= xi <= upper``.

    Active-set enumeration: every variable with a finite bound is tried free,
    at its lower bound and at its upper bound; the first pattern whose
    equality-constrained minimiser is primal feasible and has correctly
    signed bound multipliers is the (unique, by strict convexity) optimum.
    Returns ``None`` when no pattern qualifies.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    H = np.asarray(weights, dtype=float) ** 2
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(H)
    m = len(b)
    bounded = [i for i in range(n) if np.isfinite(lower[i]) or np.isfinite(upper[i])]

    options = []
    for i in bounded:
        opts = [None]
        if np.isfinite(lower[i]):
            opts.append("lo")
        if np.isfinite(upper[i]):
            opts.append("hi")
        options.append(opts)

    # Fewest active bounds first: the unconstrained solution is tried first.
    patterns = sorted(itertools.product(*options), key=lambda pat: sum(a is not None for a in pat))
    scale = 1.0 + np.abs(b).max(initial=0.0)
    for pattern in patterns:
        active = {i: act for i, act in zip(bounded, pattern) if act is not None}
        fixed = {i: (lower[i] if act == "lo" else upper[i]) for i, act in active.items()}
        free = [i for i in range(n) if i not in fixed]
        xi = np.zeros(n)
        for i, v in fixed.items():
            xi[i] = v
        rhs = b - A[:, list(fixed)] @ xi[list(fixed)] if fixed else b.copy()
        Af = A[:, free]
        nf = len(free)
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = np.diag(H[free])
        K[:nf, nf:] = Af.T
        K[nf:, :nf] = Af
        # Fewer free variables than equalities: generically inconsistent.
        if nf < m or np.linalg.matrix_rank(Af) < m:
            continue
        sol = np.linalg.solve(K, np.concatenate([np.zeros(nf), rhs]))
        xi[free] = sol[:nf]
        lam = sol[nf:]
        tol = 1e-10 * scale
        if np.any(xi < lower - tol) or np.any(xi > upper + tol):
            continue
        grad = H * xi + A.T @ lam
        # Bound multipliers: +grad at a lower bound, -grad at an upper bound.
        mults = [grad[i] if act == "lo" else -grad[i] for i, act in active.items()]
        if all(mu >= -tol for mu in mults):
            return xi
    return None


def allocate_input(theta, theta_dot, theta_ddot, p_nominal, alloc: AllocationSpec) -> np.ndarray:
    """Distribute the computed-torque demand over the four inputs."""
    A = generalized_force_matrix(theta, p_nominal)
    b = mass_matrix(theta, p_nominal) @ np.asarray(theta_ddot, dtype=float) + bias_forces(
        theta, theta_dot, p_nominal)
    xi = solve_allocation_qp(A, b, alloc.weights, alloc.u_min, alloc.u_max)
    if xi is None:
        raise AllocationInfeasible(f"allocation box excludes A_tau xi = b at theta={np.asarray(theta)}")
    return xi


def build_reference(spec: ManeuverSpec, alloc: AllocationSpec, p_nominal) -> ReferenceTrajectory:
    p = np.asarray(p_nominal, dtype=float)
    z, zd, zdd = task_reference(spec, p)
    theta, theta_dot, theta_ddot = task_to_joint(z, zd, zdd, p, theta_guess=spec.theta0)
    u = np.empty((len(z), 4))
    for k in range(len(z)):
        try:
            u[k] = allocate_input(theta[k], theta_dot[k], theta_ddot[k], p, alloc)
        except AllocationInfeasible as err:
            exc = AllocationInfeasible(f"grid index {k} (t={spec.times[k]:.4f}s): {err}")
            exc.index = k
            raise exc from err
    return ReferenceTrajectory(
        times=spec.times,
        x_bar=np.hstack([theta, theta_dot]),
        u_bar=u,
        z_bar=z,
        z_bar_dot=zd,
        z_bar_ddot=zdd,
        theta_ddot=theta_ddot,
    )
