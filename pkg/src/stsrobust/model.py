"""Equations of motion and CoM kinematics of the three-link planar robot.

Links are numbered from the ground up: shanks (1), thighs (2), torso (3).
``theta[0]`` is measured from the horizontal axis, ``theta[1]`` and
``theta[2]`` are relative angles. The ankle joint sits at the origin of the
inertial frame.

Array layouts used throughout the package:

- parameters ``p`` (12): m1, m2, m3, I1, I2, I3, l1, l2, l3, lc1, lc2, lc3
- state ``x`` (6): theta1, theta2, theta3, omega1, omega2, omega3
- input ``u`` (4): tau1 (hips), tau2 (shoulders), Fx, Fy (shoulders)
- task outputs ``zeta`` (6): theta2, x_CoM, y_CoM and their rates
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
from numba import njit

GRAVITY = 9.81

PARAMETER_NAMES = (
    "m1", "m2", "m3", "I1", "I2", "I3", "l1", "l2", "l3", "lc1", "lc2", "lc3",
)
STATE_NAMES = ("theta1", "theta2", "theta3", "omega1", "omega2", "omega3")
INPUT_NAMES = ("tau1", "tau2", "Fx", "Fy")
OUTPUT_NAMES = ("theta2", "x_com", "y_com", "omega2", "vx_com", "vy_com")


class IllConditionedMassMatrix(ArithmeticError):
    """Raised when the mass matrix fails its Cholesky factorization."""


@dataclass(frozen=True)
class ParameterVector:
    """Physical parameters of the robot, in SI units."""

    m1: float
    m2: float
    m3: float
    I1: float
    I2: float
    I3: float
    l1: float
    l2: float
    l3: float
    lc1: float
    lc2: float
    lc3: float

    def __post_init__(self):
        values = np.array(astuple(self), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError(f"parameters must be finite and positive: {values}")

    def __array__(self, dtype=None, copy=None):
        return np.array(astuple(self), dtype=dtype or float)

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "ParameterVector":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != len(PARAMETER_NAMES):
            raise ValueError(f"expected 12 parameters, got {values.size}")
        return cls(*map(float, values))

    def replace(self, **changes) -> "ParameterVector":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(changes)
        return ParameterVector(**current)


@dataclass(frozen=True)
class ParameterBox:
    """Nominal parameters and additive uncertainties.

    The ``lc`` half-widths are taken around ``l / 2`` of whatever lengths a
    particular draw has, so :meth:`contains` checks them against the draw's
    own link lengths. ``p_min``/``p_max`` use the nominal lengths.
    """

    nominal: ParameterVector
    half_widths: tuple

    def __post_init__(self):
        hw = np.asarray(self.half_widths, dtype=float)
        if hw.shape != (12,) or np.any(hw < 0.0) or not np.all(np.isfinite(hw)):
            raise ValueError("half_widths must be 12 finite nonnegative values")
        object.__setattr__(self, "half_widths", tuple(float(v) for v in hw))
        if np.any(self.p_min <= 0.0):
            raise ValueError("box admits nonpositive parameters")

    @property
    def p_min(self) -> np.ndarray:
        return self.nominal.to_array() - np.asarray(self.half_widths)

    @property
    def p_max(self) -> np.ndarray:
        return self.nominal.to_array() + np.asarray(self.half_widths)

    def contains(self, p, atol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        nom = self.nominal.to_array()
        hw = np.asarray(self.half_widths)
        centre = nom.copy()
        centre[9:12] = 0.5 * p[6:9]
        return bool(np.all(np.abs(p - centre) <= hw + atol))


def table_one_nominal() -> ParameterVector:
    """Nominal parameters of the shank/thigh/torso model."""
    l1, l2, l3 = 0.53, 0.41, 0.52
    return ParameterVector(
        m1=9.68, m2=12.59, m3=44.57,
        I1=1.16, I2=0.52, I3=2.56,
        l1=l1, l2=l2, l3=l3,
        lc1=l1 / 2, lc2=l2 / 2, lc3=l3 / 2,
    )


def table_one_box() -> ParameterBox:
    return ParameterBox(
        nominal=table_one_nominal(),
        half_widths=(0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01),
    )


# --- compiled kernels -------------------------------------------------------
# All kernels take contiguous float64 arrays.


@njit(cache=True)
def _lumped(p):
    m1, m2, m3 = p[0], p[1], p[2]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    k0 = 1.0 / (m1 + m2 + m3)
    k1 = lc1 * m1 + l1 * m2 + l1 * m3
    k2 = lc2 * m2 + l2 * m3
    k3 = lc3 * m3
    return k0, k1, k2, k3


@njit(cache=True)
def _mass_matrix(theta, p):
    m1, m2, m3, I1, I2, I3 = p[0], p[1], p[2], p[3], p[4], p[5]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    c2 = np.cos(theta[1])
    c3 = np.cos(theta[2])
    c23 = np.cos(theta[1] + theta[2])

    M11 = (I1 + I2 + I3 + lc1**2 * m1
           + m2 * (l1**2 + 2 * l1 * lc2 * c2 + lc2**2)
           + m3 * (l1**2 + 2 * l1 * l2 * c2 + 2 * l1 * lc3 * c23
                   + l2**2 + 2 * l2 * lc3 * c3 + lc3**2))
    M12 = (I2 + I3 + lc2 * m2 * (l1 * c2 + lc2)
           + m3 * (l1 * l2 * c2 + l1 * lc3 * c23 + l2**2 + 2 * l2 * lc3 * c3 + lc3**2))
    M13 = I3 + lc3 * m3 * (l1 * c23 + l2 * c3 + lc3)
    M22 = I2 + I3 + lc2**2 * m2 + m3 * (l2**2 + 2 * l2 * lc3 * c3 + lc3**2)
    M23 = I3 + lc3 * m3 * (l2 * c3 + lc3)
    M33 = I3 + lc3**2 * m3

    M = np.empty((3, 3))
    M[0, 0] = M11
    M[0, 1] = M12
    M[0, 2] = M13
    M[1, 0] = M12
    M[1, 1] = M22
    M[1, 2] = M23
    M[2, 0] = M13
    M[2, 1] = M23
    M[2, 2] = M33
    return M


@njit(cache=True)
def _bias_forces(theta, theta_dot, p):
    _, k1, k2, k3 = _lumped(p)
    l1, l2 = p[6], p[7]
    t1, t2, t3 = theta[0], theta[1], theta[2]
    s2 = np.sin(t2)
    s3 = np.sin(t3)
    s23 = np.sin(t2 + t3)
    c1 = np.cos(t1)
    c12 = np.cos(t1 + t2)
    c123 = np.cos(t1 + t2 + t3)

    w1 = theta_dot[0] ** 2
    w2 = (theta_dot[0] + theta_dot[1]) ** 2
    w3 = (theta_dot[0] + theta_dot[1] + theta_dot[2]) ** 2

    a = l1 * (k2 * s2 + k3 * s23)
    b = k3 * l2 * s3
    F = np.empty(3)
    F[0] = a * w1 + (-k2 * l1 * s2 + b) * w2 + (-k3 * l1 * s23 - b) * w3
    F[1] = a * w1 + b * w2 - b * w3
    F[2] = l1 * k3 * s23 * w1 + b * w2
    F[0] += GRAVITY * (k1 * c1 + k2 * c12 + k3 * c123)
    F[1] += GRAVITY * (k2 * c12 + k3 * c123)
    F[2] += GRAVITY * k3 * c123
    return F


@njit(cache=True)
def _force_matrix(theta, p):
    l1, l2, l3 = p[6], p[7], p[8]
    t1, t2, t3 = theta[0], theta[1], theta[2]
    s1 = np.sin(t1)
    s12 = np.sin(t1 + t2)
    s123 = np.sin(t1 + t2 + t3)
    c1 = np.cos(t1)
    c12 = np.cos(t1 + t2)
    c123 = np.cos(t1 + t2 + t3)

    At = np.zeros((3, 4))
    At[2, 0] = 1.0
    At[0, 1] = -1.0
    At[1, 1] = -1.0
    At[2, 1] = -1.0
    At[0, 2] = -l1 * s1 - l2 * s12 - l3 * s123
    At[1, 2] = -l2 * s12 - l3 * s123
    At[2, 2] = -l3 * s123
    At[0, 3] = l1 * c1 + l2 * c12 + l3 * c123
    At[1, 3] = l2 * c12 + l3 * c123
    At[2, 3] = l3 * c123
    return At


@njit(cache=True)
def _cholesky_solve3(M, b):
    # Returns (solution, ok); ok is False when M is not positive definite.
    L = np.zeros((3, 3))
    for i in range(3):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return np.zeros(3), False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(3)
    for i in range(3):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    z = np.empty(3)
    for i in range(2, -1, -1):
        s = y[i]
        for k in range(i + 1, 3):
            s -= L[k, i] * z[k]
        z[i] = s / L[i, i]
    return z, True


@njit(cache=True)
def _dynamics(x, p, u):
    theta = x[:3]
    theta_dot = x[3:]
    M = _mass_matrix(theta, p)
    rhs = _force_matrix(theta, p) @ u - _bias_forces(theta, theta_dot, p)
    acc, ok = _cholesky_solve3(M, rhs)
    xdot = np.empty(6)
    xdot[:3] = theta_dot
    xdot[3:] = acc
    return xdot, ok


@njit(cache=True)
def _com_terms(theta, p):
    """CoM position, its 2x3 Jacobian and the cumulative link angles."""
    k0, k1, k2, k3 = _lumped(p)
    k = np.array([k1, k2, k3])
    phi = np.array([theta[0], theta[0] + theta[1], theta[0] + theta[1] + theta[2]])
    c = np.cos(phi)
    s = np.sin(phi)
    pos = np.array([k0 * np.sum(k * c), k0 * np.sum(k * s)])
    J = np.zeros((2, 3))
    for j in range(3):
        for i in range(j, 3):
            J[0, j] -= k0 * k[i] * s[i]
            J[1, j] += k0 * k[i] * c[i]
    return pos, J


@njit(cache=True)
def _task_outputs(x, p):
    pos, J = _com_terms(x[:3], p)
    vel = J @ x[3:]
    z = np.empty(6)
    z[0] = x[1]
    z[1] = pos[0]
    z[2] = pos[1]
    z[3] = x[4]
    z[4] = vel[0]
    z[5] = vel[1]
    return z


# --- public API -------------------------------------------------------------


def _vec(a, n):
    arr = np.ascontiguousarray(a, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {arr.shape}")
    return arr


def lumped_constants(p) -> tuple[float, float, float, float]:
    """Return ``(k0, k1, k2, k3)``: inverse total mass and first mass moments."""
    return tuple(float(v) for v in _lumped(_vec(p, 12)))


def mass_matrix(theta, p) -> np.ndarray:
    return _mass_matrix(_vec(theta, 3), _vec(p, 12))


def bias_forces(theta, theta_dot, p) -> np.ndarray:
    """Coriolis/centripetal plus gravity terms, moved to the left-hand side."""
    return _bias_forces(_vec(theta, 3), _vec(theta_dot, 3), _vec(p, 12))


def generalized_force_matrix(theta, p) -> np.ndarray:
    """Map from ``u = (tau1, tau2, Fx, Fy)`` to generalized joint forces."""
    return _force_matrix(_vec(theta, 3), _vec(p, 12))


def forward_dynamics(x, p, u) -> np.ndarray:
    """State derivative ``[theta_dot; M^-1 (A_tau u - F)]``."""
    xdot, ok = _dynamics(_vec(x, 6), _vec(p, 12), _vec(u, 4))
    if not ok:
        raise IllConditionedMassMatrix(f"mass matrix not positive definite at x={x}")
    return xdot


def task_outputs(x, p) -> np.ndarray:
    """Return ``zeta = (theta2, x_CoM, y_CoM, omega2, vx_CoM, vy_CoM)``."""
    return _task_outputs(_vec(x, 6), _vec(p, 12))


def com_position(theta, p) -> np.ndarray:
    return _com_terms(_vec(theta, 3), _vec(p, 12))[0]


def com_jacobian(theta, p) -> np.ndarray:
    """Partial derivatives of the CoM position with respect to ``theta`` (2x3)."""
    return _com_terms(_vec(theta, 3), _vec(p, 12))[1]


def com_jacobian_rate(theta, theta_dot, p) -> np.ndarray:
    """Time derivative of :func:`com_jacobian` along ``theta_dot``.

    For this chain the matrix also equals the partial derivative of the CoM
    velocity with respect to ``theta``.
    """
    theta = _vec(theta, 3)
    theta_dot = _vec(theta_dot, 3)
    k0, k1, k2, k3 = lumped_constants(p)
    k = np.array([k1, k2, k3])
    phi = np.cumsum(theta)
    phi_dot = np.cumsum(theta_dot)
    terms = k0 * k * phi_dot
    Jd = np.zeros((2, 3))
    for j in range(3):
        Jd[0, j] = -np.sum(terms[j:] * np.cos(phi[j:]))
        Jd[1, j] = -np.sum(terms[j:] * np.sin(phi[j:]))
    return Jd


def potential_energy(theta, p) -> float:
    _, k1, k2, k3 = lumped_constants(p)
    phi = np.cumsum(_vec(theta, 3))
    return GRAVITY * float(np.dot([k1, k2, k3], np.sin(phi)))


def kinetic_energy(x, p) -> float:
    x = _vec(x, 6)
    return 0.5 * float(x[3:] @ mass_matrix(x[:3], p) @ x[3:])
