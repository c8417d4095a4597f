"""3-DOF planar dynamics of a fully-actuated surface vessel.

State vector layout: ``[x, y, psi, u, v, r]`` with (x, y, psi) in the inertial
frame and (u, v, r) the body-fixed surge, sway and yaw rate.

Kinematics:   eta_dot = R(psi) nu
Kinetics:     M nu_dot + C(nu) nu + D(nu) nu = B f

Four thrusters: f1/f2 push along the surge axis (port/starboard, lever a_d/2),
f3/f4 push along the sway axis (fore/aft, lever b_d/2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

NX = 6
NU = 4


def wrap_angle(a):
    """Wrap an angle (or array) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


class IntegrationFault(RuntimeError):
    """Raised when an integration step produces non-finite values."""


@dataclass(frozen=True)
class VesselState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u: float = 0.0
    v: float = 0.0
    r: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite vessel state: {vals}")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.u, self.v, self.r], dtype=float)

    @classmethod
    def from_array(cls, a) -> "VesselState":
        a = np.asarray(a, dtype=float)
        return cls(*map(float, a[:NX]))


@dataclass(frozen=True)
class VesselParams:
    """Rigid body, added mass, drag and thruster layout.

    Defaults describe a 15 kg, 0.90 m x 0.45 m hull. Hydrodynamic entries are
    plausible values for a boat of that size, not identified coefficients.
    """

    length: float = 0.90
    width: float = 0.45
    mass: float = 15.0
    added_mass: tuple = (1.5, 7.5, 0.5)  # -X_udot, -Y_vdot, -N_rdot
    inertia_z: float | None = None  # defaults to the box inertia
    linear_drag: tuple = (4.0, 8.0, 1.5)
    quadratic_drag: tuple = (6.0, 12.0, 1.0)
    a_d: float = 0.30  # port-starboard spacing of the surge thrusters
    b_d: float = 0.60  # fore-aft spacing of the sway thrusters
    thrust_min: float = -20.0
    thrust_max: float = 20.0
    _m_diag: np.ndarray = field(init=False, repr=False, compare=False)
    _B: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.length >= self.width):
            raise ValueError("vessel needs length >= width > 0")
        if self.thrust_min >= self.thrust_max:
            raise ValueError("thrust_min must be below thrust_max")
        iz = self.inertia_z
        if iz is None:
            iz = self.mass * (self.length**2 + self.width**2) / 12.0
        m = np.array([self.mass, self.mass, iz]) + np.asarray(self.added_mass, float)
        if np.any(m <= 0):
            raise ValueError("mass matrix must be positive definite")
        if np.any(np.asarray(self.linear_drag) <= 0) or np.any(np.asarray(self.quadratic_drag) < 0):
            raise ValueError("drag must be dissipative")
        object.__setattr__(self, "_m_diag", m)
        object.__setattr__(self, "_B", control_matrix(self.a_d, self.b_d))

    @property
    def M(self) -> np.ndarray:
        return np.diag(self._m_diag)

    @property
    def B(self) -> np.ndarray:
        return self._B.copy()

    @property
    def r_max(self) -> float:
        """Radius of the circle enclosing the hull rectangle."""
        return 0.5 * float(np.hypot(self.length, self.width))

    @property
    def thrust_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.full(NU, self.thrust_min), np.full(NU, self.thrust_max)

    def coriolis(self, nu) -> np.ndarray:
        """C(nu) for a diagonal mass matrix; skew-symmetric."""
        u, v, _ = np.asarray(nu, float)
        m11, m22, _ = self._m_diag
        return np.array([[0.0, 0.0, -m22 * v], [0.0, 0.0, m11 * u], [m22 * v, -m11 * u, 0.0]])

    def drag(self, nu) -> np.ndarray:
        nu = np.asarray(nu, float)
        return np.diag(np.asarray(self.linear_drag) + np.asarray(self.quadratic_drag) * np.abs(nu))

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "width": self.width,
            "mass": self.mass,
            "added_mass": list(self.added_mass),
            "inertia_z": self.inertia_z,
            "linear_drag": list(self.linear_drag),
            "quadratic_drag": list(self.quadratic_drag),
            "a_d": self.a_d,
            "b_d": self.b_d,
            "thrust_min": self.thrust_min,
            "thrust_max": self.thrust_max,
        }


def control_matrix(a_d: float, b_d: float) -> np.ndarray:
    return np.array(
        [
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [a_d / 2.0, -a_d / 2.0, b_d / 2.0, -b_d / 2.0],
        ]
    )


def allocate(f, params: VesselParams) -> np.ndarray:
    """Map thruster forces (..., 4) to generalized force (..., 3)."""
    return np.asarray(f, float) @ params._B.T


def _as_state_array(s) -> np.ndarray:
    if isinstance(s, VesselState):
        return s.as_array()
    return np.asarray(s, dtype=float)


def velocity_drift(nu, params: VesselParams) -> np.ndarray:
    """-M^-1 (C(nu) + D(nu)) nu for arrays of shape (..., 3)."""
    nu = np.asarray(nu, float)
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    m11, m22, m33 = params._m_diag
    dl = params.linear_drag
    dq = params.quadratic_drag
    cor = np.stack([-m22 * v * r, m11 * u * r, (m22 - m11) * u * v], axis=-1)
    damp = np.stack(
        [
            (dl[0] + dq[0] * np.abs(u)) * u,
            (dl[1] + dq[1] * np.abs(v)) * v,
            (dl[2] + dq[2] * np.abs(r)) * r,
        ],
        axis=-1,
    )
    return -(cor + damp) / params._m_diag


def input_gain(params: VesselParams) -> np.ndarray:
    """M^-1 B, the (3, 4) map from thrust to body acceleration."""
    return params._B / params._m_diag[:, None]


def state_derivative(s, f, params: VesselParams) -> np.ndarray:
    """x_dot = f(x) + g(x) u, vectorised over leading dimensions."""
    x = _as_state_array(s)
    f = np.asarray(f, float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
        raise ValueError("non-finite state or input")
    psi = x[..., 2]
    nu = x[..., 3:6]
    c, s_ = np.cos(psi), np.sin(psi)
    xd = c * nu[..., 0] - s_ * nu[..., 1]
    yd = s_ * nu[..., 0] + c * nu[..., 1]
    acc = velocity_drift(nu, params) + f @ input_gain(params).T
    return np.concatenate([np.stack([xd, yd, nu[..., 2]], axis=-1), acc], axis=-1)


def rk4(x, f, params: VesselParams, dt: float) -> np.ndarray:
    """One RK4 step without angle wrapping (smooth in x, for linearisation)."""
    k1 = state_derivative(x, f, params)
    k2 = state_derivative(x + 0.5 * dt * k1, f, params)
    k3 = state_derivative(x + 0.5 * dt * k2, f, params)
    k4 = state_derivative(x + dt * k3, f, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_rollout(x0, U, params: VesselParams, dt: float) -> np.ndarray:
    """Sequential RK4 over a control sequence (N, 4); returns (N+1, 6) states.

    Same map as `rk4` applied step by step, written on plain floats because the
    array version is dominated by call overhead at this size.
    """
    m1, m2, m3 = (float(v) for v in params._m_diag)
    l1, l2, l3 = (float(v) for v in params.linear_drag)
    q1, q2, q3 = (float(v) for v in params.quadratic_drag)
    G = input_gain(params)
    tau = np.asarray(U, float) @ G.T  # (N, 3) body accelerations from thrust
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(x0))):
        raise ValueError("non-finite state or input")
    cos, sin = math.cos, math.sin

    def deriv(x, y, psi, u, v, r, a0, a1, a2):
        c, s_ = cos(psi), sin(psi)
        return (
            c * u - s_ * v,
            s_ * u + c * v,
            r,
            (m2 * v * r - (l1 + q1 * abs(u)) * u) / m1 + a0,
            (-m1 * u * r - (l2 + q2 * abs(v)) * v) / m2 + a1,
            ((m1 - m2) * u * v - (l3 + q3 * abs(r)) * r) / m3 + a2,
        )

    out = np.empty((len(tau) + 1, NX))
    out[0] = x0
    st = tuple(float(v) for v in x0)
    h = 0.5 * dt
    for k, (a0, a1, a2) in enumerate(tau.tolist()):
        k1 = deriv(*st, a0, a1, a2)
        k2 = deriv(*(si + h * di for si, di in zip(st, k1)), a0, a1, a2)
        k3 = deriv(*(si + h * di for si, di in zip(st, k2)), a0, a1, a2)
        k4 = deriv(*(si + dt * di for si, di in zip(st, k3)), a0, a1, a2)
        st = tuple(si + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
                   for si, d1, d2, d3, d4 in zip(st, k1, k2, k3, k4))
        out[k + 1] = st
    return out


def step_rk4(s, f, params: VesselParams, dt: float):
    """Advance a state by dt with classical RK4 and re-wrap the heading.

    Returns the same type that was passed in (VesselState or ndarray).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = _as_state_array(s)
    xn = rk4(x, f, params, dt)
    if not np.all(np.isfinite(xn)):
        raise IntegrationFault("RK4 step produced non-finite state")
    xn = np.array(xn, copy=True)
    xn[..., 2] = wrap_angle(xn[..., 2])
    if isinstance(s, VesselState):
        return VesselState.from_array(xn)
    return xn


def kinetic_energy(s, params: VesselParams) -> float:
    nu = _as_state_array(s)[3:6]
    return 0.5 * float(nu @ (params._m_diag * nu))


def steady_surge_thrust(u_ref: float, params: VesselParams) -> np.ndarray:
    """Thruster forces holding a constant surge speed with zero sway and yaw."""
    drag = (params.linear_drag[0] + params.quadratic_drag[0] * abs(u_ref)) * u_ref
    return np.array([drag / 2.0, drag / 2.0, 0.0, 0.0])
