"""Relative-degree-two barrier constraints and the minimally invasive safety QP.

Every barrier here is a function h of the world position of one body point
(the hull centre, or a circle centre for the multi-circle baseline). With the
inflation radius held fixed over a control period, h has relative degree two
and the HOCBF condition with linear class-K gains k1, k2 reads

    b_ddot + (k1 + k2) b_dot + k1 k2 b >= 0,

which is affine in the thruster forces.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VesselParams, input_gain, velocity_drift, wrap_angle
from .geometry import ClosestPair, EllipseObstacle, adaptive_radius
from .qp import QpSolver, QuadProgram

_S = np.array([[0.0, -1.0], [1.0, 0.0]])

# fixed bearings of the canal walls: top (+x), bottom (-x), left (-y), right (+y)
WALL_BEARINGS = {"t": 0.0, "b": np.pi, "l": -np.pi / 2.0, "r": np.pi / 2.0}


@dataclass(frozen=True)
class ClassKConfig:
    k1: float = 1.0
    k2: float = 1.0
    c3: float = 1.0  # CLF decay rate
    k_v: float = 1.0  # CLF heading gain
    clf_penalty: float = 1e7

    def __post_init__(self):
        if min(self.k1, self.k2, self.c3, self.k_v) <= 0:
            raise ValueError("class-K and CLF gains must be positive")


@dataclass(frozen=True)
class CanalSpec:
    """Axis-aligned corridor: extent h_c along x, w_c along y, centred at (x_c, y_c)."""

    x_c: float
    y_c: float
    height: float
    width: float

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("canal dimensions must be positive")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (
            self.x_c - self.height / 2.0,
            self.x_c + self.height / 2.0,
            self.y_c - self.width / 2.0,
            self.y_c + self.width / 2.0,
        )

    def walls(self) -> dict:
        """Wall segments keyed by t/b/l/r."""
        x0, x1, y0, y1 = self.bounds
        return {
            "t": (np.array([x1, y0]), np.array([x1, y1])),
            "b": (np.array([x0, y0]), np.array([x0, y1])),
            "l": (np.array([x0, y0]), np.array([x1, y0])),
            "r": (np.array([x0, y1]), np.array([x1, y1])),
        }

    def to_dict(self) -> dict:
        return {"x_c": self.x_c, "y_c": self.y_c, "height": self.height, "width": self.width}


@dataclass
class BarrierConstraint:
    """One HOCBF row  lglfb . u >= -(lf2b + (k1 + k2) bdot + k1 k2 b)."""

    tag: str
    b: float
    bdot: float
    lf2b: float
    lglfb: np.ndarray
    radius: float = 0.0
    psi1: float = float("nan")

    def row(self, k1: float, k2: float) -> tuple[np.ndarray, float]:
        return self.lglfb, -(self.lf2b + (k1 + k2) * self.bdot + k1 * k2 * self.b)

    def psi2(self, u, k1: float, k2: float) -> float:
        g, rhs = self.row(k1, k2)
        return float(g @ np.asarray(u, float) - rhs)


@dataclass
class ClfConstraint:
    """V = (r + k_v (psi - psi_d))^2 and its Lie derivatives."""

    V: float
    lfV: float
    lgV: np.ndarray
    psi_d: float

    def row(self, c3: float) -> tuple[np.ndarray, float]:
        """As a >= row: -lgV . u >= lfV + c3 V."""
        return -self.lgV, self.lfV + c3 * self.V


@dataclass
class FilterResult:
    u: np.ndarray
    status: str  # ok | relaxed | emergency
    relaxations: int = 0
    active: tuple = ()
    clf_slack: float = 0.0
    qp_time: float = 0.0
    events: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Lie derivatives of a body-point barrier


def body_point_kinematics(state, params: VesselParams, offset=(0.0, 0.0)):
    """Position, velocity, drift acceleration and input-acceleration map of a body point."""
    x = np.asarray(state, float)
    psi = x[2]
    nu = x[3:6]
    o = np.asarray(offset, float)
    c, s = np.cos(psi), np.sin(psi)
    R = np.array([[c, -s], [s, c]])
    a0 = velocity_drift(nu, params)
    G = input_gain(params)
    So = _S @ o
    w = nu[:2] + nu[2] * So
    pos = x[:2] + R @ o
    vel = R @ w
    acc0 = R @ (nu[2] * (_S @ w) + a0[:2] + a0[2] * So)
    accg = R @ (G[:2] + np.outer(So, G[2]))
    return pos, vel, acc0, accg


def _lift(tag, h, grad, hess, vel, acc0, accg, radius, cfg):
    bdot = float(grad @ vel)
    lf2b = float(vel @ hess @ vel + grad @ acc0)
    lglfb = grad @ accg
    k1 = cfg.k1 if cfg is not None else 1.0
    return BarrierConstraint(tag, float(h), bdot, lf2b, lglfb, radius, bdot + k1 * float(h))


def ellipse_barrier(state, e: EllipseObstacle, radius: float, params: VesselParams,
                    cfg: ClassKConfig | None = None, offset=(0.0, 0.0), tag: str = "obstacle") -> BarrierConstraint:
    """Barrier of an ellipse grown by ``radius`` on both semi-axes."""
    pos, vel, acc0, accg = body_point_kinematics(state, params, offset)
    P = e.inflated(radius).shape_matrix()
    d = pos - e.center
    h = d @ P @ d - 1.0
    return _lift(tag, h, 2.0 * P @ d, 2.0 * P, vel, acc0, accg, radius, cfg)


def build_obstacle_barrier(state, e: EllipseObstacle, pair: ClosestPair, params: VesselParams,
                           cfg: ClassKConfig | None = None, tag: str = "obstacle") -> BarrierConstraint:
    """Adaptive-inflation barrier: radius from the relative angle of the closest pair."""
    r_o = float(adaptive_radius(pair.alpha, params.length, params.width))
    return ellipse_barrier(state, e, r_o, params, cfg, tag=tag)


def wall_barrier(state, canal: CanalSpec, side: str, radius: float, params: VesselParams,
                 cfg: ClassKConfig | None = None, offset=(0.0, 0.0), tag: str | None = None) -> BarrierConstraint:
    pos, vel, acc0, accg = body_point_kinematics(state, params, offset)
    dx = pos[0] - canal.x_c
    dy = pos[1] - canal.y_c
    if side == "b":
        h, grad = canal.height / 2.0 - radius + dx, np.array([1.0, 0.0])
    elif side == "t":
        h, grad = canal.height / 2.0 - radius - dx, np.array([-1.0, 0.0])
    elif side == "l":
        h, grad = canal.width / 2.0 - radius + dy, np.array([0.0, 1.0])
    elif side == "r":
        h, grad = canal.width / 2.0 - radius - dy, np.array([0.0, -1.0])
    else:
        raise ValueError(f"unknown wall {side!r}")
    return _lift(tag or f"boundary-{side}", h, grad, np.zeros((2, 2)), vel, acc0, accg, radius, cfg)


def build_boundary_barriers(state, canal: CanalSpec, params: VesselParams,
                            cfg: ClassKConfig | None = None, radius: float | None = None) -> list[BarrierConstraint]:
    """The four corridor barriers ordered t, b, l, r.

    Each wall uses the adaptive radius at its fixed bearing unless ``radius`` is given.
    """
    psi = float(np.asarray(state, float)[2])
    out = []
    for side in ("t", "b", "l", "r"):
        r = radius
        if r is None:
            r = float(adaptive_radius(psi - WALL_BEARINGS[side], params.length, params.width))
        out.append(wall_barrier(state, canal, side, r, params, cfg))
    return out


def clf_constraint(state, psi_d: float, params: VesselParams, cfg: ClassKConfig) -> ClfConstraint:
    x = np.asarray(state, float)
    r = x[5]
    e = r + cfg.k_v * wrap_angle(x[2] - psi_d)
    a0 = velocity_drift(x[3:6], params)
    G = input_gain(params)
    V = e * e
    lfV = 2.0 * e * (a0[2] + cfg.k_v * r)
    lgV = 2.0 * e * G[2]
    return ClfConstraint(float(V), float(lfV), lgV, float(psi_d))


# ---------------------------------------------------------------------------
# safety QP

_solver = QpSolver(max_iter=200)


def _feasible(u, rows, lo, hi, tol=1e-12) -> bool:
    if np.any(u < lo - tol) or np.any(u > hi + tol):
        return False
    return all(g @ u >= rhs - tol for g, rhs in rows)


def _solve(u_ref, rows, lo, hi, clf_row=None, clf_penalty=1e4):
    n = len(u_ref)
    if clf_row is None:
        H = 2.0 * np.eye(n)
        c = -2.0 * u_ref
        A = np.array([g for g, _ in rows]).reshape(-1, n)
        b = np.array([r for _, r in rows])
        qp = QuadProgram(H, c, A, b, lo, hi)
    else:
        H = np.diag(np.concatenate([np.full(n, 2.0), [2.0 * clf_penalty]]))
        c = np.concatenate([-2.0 * u_ref, [0.0]])
        A = [np.concatenate([g, [0.0]]) for g, _ in rows]
        A.append(np.concatenate([clf_row[0], [1.0]]))
        b = [r for _, r in rows] + [clf_row[1]]
        qp = QuadProgram(H, c, np.array(A), np.array(b), np.append(lo, 0.0), np.append(hi, np.inf))
    return _solver.solve(qp)


def _min_violation(u_ref, rows, lo, hi, weight=1e4, eps=1e-3):
    """Last resort: least-squares constraint violation, tie-broken toward u_ref."""
    n = len(u_ref)
    m = len(rows)
    H = np.diag(np.concatenate([np.full(n, 2.0 * eps), np.full(m, 2.0 * weight)]))
    c = np.concatenate([-2.0 * eps * u_ref, np.zeros(m)])
    A = np.zeros((m, n + m))
    b = np.zeros(m)
    for j, (g, r) in enumerate(rows):
        A[j, :n] = g
        A[j, n + j] = 1.0
        b[j] = r
    qp = QuadProgram(H, c, A, b, np.concatenate([lo, np.zeros(m)]), np.concatenate([hi, np.full(m, np.inf)]))
    sol = _solver.solve(qp)
    return np.clip(sol.z[:n], lo, hi)


def filter_control(u_ref, constraints: list[BarrierConstraint], lo, hi, cfg: ClassKConfig,
                   clf: ClfConstraint | None = None, max_relax: int = 4) -> FilterResult:
    """min ||u - u_ref||^2 subject to every HOCBF row and the thrust box.

    With ``clf`` the heading CLF is added as a soft row. If infeasible, k2 is
    halved up to ``max_relax`` times before falling back to violation minimisation.
    """
    t0 = time.perf_counter()
    u_ref = np.asarray(u_ref, float)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    events = []
    k2 = cfg.k2
    for attempt in range(max_relax + 1):
        rows = [bc.row(cfg.k1, k2) for bc in constraints]
        clf_row = clf.row(cfg.c3) if clf is not None else None
        if clf_row is None and _feasible(u_ref, rows, lo, hi):
            return FilterResult(u_ref.copy(), "ok" if attempt == 0 else "relaxed", attempt,
                                qp_time=time.perf_counter() - t0, events=events)
        sol = _solve(u_ref, rows, lo, hi, clf_row, cfg.clf_penalty)
        if sol.ok:
            u = np.clip(sol.z[:4], lo, hi)
            slack = float(sol.z[4]) if clf_row is not None else 0.0
            return FilterResult(u, "ok" if attempt == 0 else "relaxed", attempt, sol.active, slack,
                                time.perf_counter() - t0, events)
        events.append(f"infeasible with k2={k2:g}")
        k2 *= 0.5
    rows = [bc.row(cfg.k1, cfg.k2) for bc in constraints]
    u = _min_violation(u_ref, rows, lo, hi)
    events.append("emergency: violation minimisation")
    return FilterResult(u, "emergency", max_relax + 1, qp_time=time.perf_counter() - t0, events=events)


def filter_with_clf(u_ref, constraints, clf: ClfConstraint, lo, hi, cfg: ClassKConfig) -> FilterResult:
    return filter_control(u_ref, constraints, lo, hi, cfg, clf=clf)
