"""Receding-horizon path-following planner.

Direct multiple shooting over N RK4 intervals, solved by Gauss-Newton SQP in
real-time-iteration style: each cycle linearises around the shifted previous
plan, condenses the shooting nodes out of the subproblem and hands a dense QP
in the control increments (plus obstacle slacks) to the active-set solver.
Obstacle rows are soft with a quadratic slack penalty; corridor rows are hard.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cbf import CanalSpec
from .dynamics import NU, NX, VesselParams, rk4, rk4_rollout, steady_surge_thrust
from .geometry import EllipseObstacle
from .path import PathSpec
from .qp import QpSolver, QuadProgram

INFLATION_MODES = ("inner", "enclosing", "multicircle")


@dataclass
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    q_y: float = 10.0
    q_psi: float = 4.0
    q_u: float = 20.0
    q_r: float = 1.0
    w: tuple = (1e-3, 1e-3, 1e-3, 1e-3)
    u_ref: float = 0.4
    x_min: tuple = (-np.inf, -np.inf, -np.inf, -0.5, -0.6, -1.0)
    x_max: tuple = (np.inf, np.inf, np.inf, 1.0, 0.6, 1.0)
    u_min: float | None = None  # defaults to the vessel thrust limits
    u_max: float | None = None
    sqp_iters: int = 2
    inflation: str = "inner"
    d_s: float = 0.05
    slack_penalty: float = 1e3
    levenberg: float = 1e-4
    obstacle_range: float = 2.5

    def __post_init__(self):
        if self.horizon < 2 or self.dt <= 0:
            raise ValueError("need horizon >= 2 and dt > 0")
        if min(self.q_y, self.q_psi, self.q_u, self.q_r) < 0:
            raise ValueError("weights must be non-negative")
        if np.linalg.eigvalsh(self.W).min() < -1e-12:
            raise ValueError("W must be positive semi-definite")
        if self.inflation not in INFLATION_MODES:
            raise ValueError(f"inflation must be one of {INFLATION_MODES}")
        self.x_min = tuple(float(v) for v in self.x_min)
        self.x_max = tuple(float(v) for v in self.x_max)

    @property
    def W(self) -> np.ndarray:
        w = np.asarray(self.w, float)
        return np.diag(w) if w.ndim == 1 else w


@dataclass
class MpcSolution:
    states: np.ndarray  # (N+1, 6)
    controls: np.ndarray  # (N, 4)
    cost: float
    status: str  # optimal | max-iter | failed | fallback
    solve_time: float = 0.0
    qp_iterations: int = 0
    slack: float = 0.0

    @property
    def u0(self) -> np.ndarray:
        return self.controls[0]


# ---------------------------------------------------------------------------
# cost terms


def stage_cost(x, u, y_e: float, gamma_p: float, cfg: MpcConfig) -> float:
    return terminal_cost(x, y_e, gamma_p, cfg) + float(np.asarray(u) @ cfg.W @ np.asarray(u))


def terminal_cost(x, y_e: float, gamma_p: float, cfg: MpcConfig) -> float:
    x = np.asarray(x, float)
    psi = x[2]
    heading = (np.sin(psi) - np.sin(gamma_p)) ** 2 + (np.cos(psi) - np.cos(gamma_p)) ** 2
    return float(cfg.q_y * y_e**2 + cfg.q_r * x[5] ** 2 + cfg.q_psi * heading + cfg.q_u * (x[3] - cfg.u_ref) ** 2)


def ellipse_constraint(x, e: EllipseObstacle, r_infl: float) -> float:
    """Exterior form of the rotated-ellipse constraint; feasible iff >= 0."""
    if r_infl <= 0:
        raise ValueError("inflation radius must be positive")
    x = np.asarray(x, float)
    dx, dy = x[0] - e.x, x[1] - e.y
    c, s = np.cos(e.theta), np.sin(e.theta)
    xp = dx * c + dy * s
    yp = dx * s - dy * c
    return float(xp**2 / (e.a + r_infl) ** 2 + yp**2 / (e.b + r_infl) ** 2 - 1.0)


def body_points(params: VesselParams, cfg: MpcConfig) -> tuple[np.ndarray, float]:
    """Body-frame points constrained by the planner and their inflation radius.

    Obstacles already carry the safety distance, so it is not added here.
    """
    if cfg.inflation == "inner":
        return np.zeros((1, 2)), params.width / 2.0
    if cfg.inflation == "enclosing":
        return np.zeros((1, 2)), params.r_max
    l3 = params.length / 3.0
    r_c = float(np.hypot(params.length / 6.0, params.width / 2.0))
    return np.array([[-l3, 0.0], [0.0, 0.0], [l3, 0.0]]), r_c


# ---------------------------------------------------------------------------


def _rollout(x0, U, params, dt):
    return rk4_rollout(x0, U, params, dt)


def _jacobians(X, U, params, dt, eps=1e-6):
    """Central-difference Jacobians of the RK4 map at every shooting node, batched."""
    N = len(U)
    nz = NX + NU
    D = np.eye(nz) * eps
    Z = np.concatenate([X[:N], U], axis=1)  # (N, 10)
    Zp = Z[:, None, :] + D[None, :, :]
    Zm = Z[:, None, :] - D[None, :, :]
    Zall = np.concatenate([Zp, Zm], axis=1)  # (N, 20, 10)
    F = rk4(Zall[..., :NX], Zall[..., NX:], params, dt)
    J = (F[:, :nz, :] - F[:, nz:, :]) / (2 * eps)  # (N, nz, NX) -> d F / d z_j
    J = np.transpose(J, (0, 2, 1))  # (N, NX, nz)
    Fn = rk4(X[:N], U, params, dt)
    return J[:, :, :NX], J[:, :, NX:], Fn


class MpcPlanner:
    """Owns the warm start and solver workspace for one control loop."""

    def __init__(self, params: VesselParams, cfg: MpcConfig | None = None):
        self.params = params
        self.cfg = cfg or MpcConfig()
        lo, hi = params.thrust_bounds
        if self.cfg.u_min is not None:
            lo = np.full(NU, self.cfg.u_min)
        if self.cfg.u_max is not None:
            hi = np.full(NU, self.cfg.u_max)
        self.u_lo, self.u_hi = lo, hi
        self.solver = QpSolver(max_iter=400)
        self.corridor_prune = 1.0  # m; corridor rows slacker than this are left out of the QP
        self._U = None
        self.last: MpcSolution | None = None

    def reset(self):
        self._U = None
        self.last = None

    # -- warm start ---------------------------------------------------------
    def _initial_controls(self):
        N = self.cfg.horizon
        if self._U is None:
            u = np.clip(steady_surge_thrust(self.cfg.u_ref, self.params), self.u_lo, self.u_hi)
            return np.tile(u, (N, 1))
        return np.vstack([self._U[1:], self._U[-1:]])

    def fallback(self, x0) -> MpcSolution:
        """Previous plan shifted by one step, or a zero-thrust hold if none."""
        cfg = self.cfg
        if self.last is not None and self.last.status != "fallback":
            U = np.vstack([self.last.controls[1:], np.zeros((1, NU))])
        else:
            U = np.zeros((cfg.horizon, NU))
        X = _rollout(np.asarray(x0, float), U, self.params, cfg.dt)
        sol = MpcSolution(X, U, float("nan"), "fallback")
        self.last = sol
        self._U = U
        return sol

    # -- residuals ------------------------------------------------------------
    def _residuals(self, X, U, path: PathSpec, omega0: float):
        """Stacked least-squares residuals and their state/control Jacobians."""
        cfg = self.cfg
        N = cfg.horizon
        step = np.linalg.norm(np.diff(X[:, :2], axis=0), axis=1)
        hints = omega0 + np.concatenate([[0.0], np.cumsum(step)])
        omega = path.project_many(X[:, :2], hints, back=0.5, ahead=1.0)
        y_e, gamma = path.errors_many(X[:, :2], omega)
        sq = np.sqrt
        psi = X[:, 2]
        res = np.stack(
            [
                sq(cfg.q_y) * y_e,
                sq(cfg.q_r) * X[:, 5],
                sq(cfg.q_psi) * (np.sin(psi) - np.sin(gamma)),
                sq(cfg.q_psi) * (np.cos(psi) - np.cos(gamma)),
                sq(cfg.q_u) * (X[:, 3] - cfg.u_ref),
            ],
            axis=1,
        )  # (N+1, 5)
        Jx = np.zeros((N + 1, 5, NX))
        Jx[:, 0, 0] = -sq(cfg.q_y) * np.sin(gamma)
        Jx[:, 0, 1] = sq(cfg.q_y) * np.cos(gamma)
        Jx[:, 1, 5] = sq(cfg.q_r)
        Jx[:, 2, 2] = sq(cfg.q_psi) * np.cos(psi)
        Jx[:, 3, 2] = -sq(cfg.q_psi) * np.sin(psi)
        Jx[:, 4, 3] = sq(cfg.q_u)
        Wh = np.linalg.cholesky(cfg.W + 1e-15 * np.eye(NU)).T
        res_u = U @ Wh.T  # (N, 4)
        return res, Jx, res_u, Wh, omega

    def cost(self, X, U, path: PathSpec, omega0: float) -> float:
        res, _, res_u, _, _ = self._residuals(X, U, path, omega0)
        return float(np.sum(res**2) + np.sum(res_u**2))

    # -- constraints ------------------------------------------------------------
    def _obstacle_rows(self, X, obstacles, pts, radius):
        """Linearised ellipse rows for knots near an obstacle.

        Returns (knot index, obstacle index, state gradient (m, 6), value) arrays.
        """
        K, E, G, V = [], [], [], []
        N = len(X) - 1
        psi = X[1:, 2]
        c, s = np.cos(psi), np.sin(psi)
        for e_idx, e in enumerate(obstacles):
            ei = e.inflated(radius)
            P = ei.shape_matrix()
            reach = ei.a + self.cfg.obstacle_range
            for o in pts:
                px = X[1:, 0] + c * o[0] - s * o[1]
                py = X[1:, 1] + s * o[0] + c * o[1]
                d = np.stack([px - e.x, py - e.y], axis=1)
                near = np.hypot(d[:, 0], d[:, 1]) < reach
                if not near.any():
                    continue
                d = d[near]
                grad_p = 2.0 * d @ P
                dpos = np.stack([-s * o[0] - c * o[1], c * o[0] - s * o[1]], axis=1)[near]
                g = np.zeros((len(d), NX))
                g[:, :2] = grad_p
                g[:, 2] = np.sum(grad_p * dpos, axis=1)
                K.append(np.flatnonzero(near) + 1)
                E.append(np.full(len(d), e_idx))
                G.append(g)
                V.append(np.einsum("ki,ij,kj->k", d, P, d) - 1.0)
        if not K:
            return np.zeros(0, int), np.zeros(0, int), np.zeros((0, NX)), np.zeros(0)
        return np.concatenate(K), np.concatenate(E), np.vstack(G), np.concatenate(V)

    def _corridor_rows(self, X, canal: CanalSpec | None, pts, radius, prune: float = np.inf):
        """Position bounds of each body point as rows g.dx >= lb.

        Rows whose bound is slack by more than `prune` metres are dropped.
        Returns (knot index, gradient (m, 6), lb).
        """
        if canal is None:
            return np.zeros(0, int), np.zeros((0, NX)), np.zeros(0)
        x0, x1, y0, y1 = canal.bounds
        N = len(X) - 1
        psi = X[1:, 2]
        c, s = np.cos(psi), np.sin(psi)
        knots = np.arange(1, N + 1)
        K, G, L = [], [], []
        for o in pts:
            px = X[1:, 0] + c * o[0] - s * o[1]
            py = X[1:, 1] + s * o[0] + c * o[1]
            gx = np.zeros((N, NX))
            gx[:, 0], gx[:, 2] = 1.0, -s * o[0] - c * o[1]
            gy = np.zeros((N, NX))
            gy[:, 1], gy[:, 2] = 1.0, c * o[0] - s * o[1]
            for g, lb in ((gx, x0 + radius - px), (-gx, px - (x1 - radius)),
                          (gy, y0 + radius - py), (-gy, py - (y1 - radius))):
                keep = lb > -prune
                K.append(knots[keep])
                G.append(g[keep])
                L.append(lb[keep])
        return np.concatenate(K), np.vstack(G), np.concatenate(L)

    # -- main entry -------------------------------------------------------------
    def solve(self, x0, path: PathSpec, obstacles, canal: CanalSpec | None, omega0: float) -> MpcSolution:
        t_start = time.perf_counter()
        cfg = self.cfg
        N = cfg.horizon
        x0 = np.asarray(x0, float)
        if not np.all(np.isfinite(x0)):
            raise ValueError("non-finite state estimate")
        pts, radius = body_points(self.params, cfg)
        obstacles = list(obstacles or [])

        U = np.clip(self._initial_controls(), self.u_lo, self.u_hi)
        X = _rollout(x0, U, self.params, cfg.dt)
        candidates = [(self._merit(X, U, path, obstacles, canal, pts, radius, omega0), X, U, 0.0)]
        status = "optimal"
        qp_its = 0
        for _ in range(cfg.sqp_iters):
            step = self._sqp_step(x0, X, U, path, obstacles, canal, pts, radius, omega0)
            if step is None:
                status = "failed"
                break
            X, U, slack, its = step
            qp_its += its
            Xr = _rollout(x0, U, self.params, cfg.dt)
            candidates.append((self._merit(Xr, U, path, obstacles, canal, pts, radius, omega0), Xr, U, slack))
        if status == "failed" and len(candidates) == 1:
            sol = self.fallback(x0)
            sol.solve_time = time.perf_counter() - t_start
            return sol
        merit, Xb, Ub, slack = min(candidates[1:] if len(candidates) > 1 else candidates, key=lambda c: c[0])
        self._U = Ub
        sol = MpcSolution(Xb, Ub, self.cost(Xb, Ub, path, omega0), status,
                          time.perf_counter() - t_start, qp_its, slack)
        self.last = sol
        return sol

    def _merit(self, X, U, path, obstacles, canal, pts, radius, omega0):
        m = self.cost(X, U, path, omega0)
        val = self._obstacle_rows(X, obstacles, pts, radius)[3]
        m += self.cfg.slack_penalty * float(np.sum(np.minimum(val, 0.0) ** 2))
        viol = self._corridor_rows(X, canal, pts, radius + self.cfg.d_s)[2]
        return m + 1e4 * float(np.sum(np.maximum(viol, 0.0) ** 2))

    def _sqp_step(self, x0, X, U, path, obstacles, canal, pts, radius, omega0):
        cfg = self.cfg
        N = cfg.horizon
        dt = cfg.dt
        A, B, Fn = _jacobians(X, U, self.params, dt)
        gaps = Fn - X[1:]  # (N, 6)
        # condensing: dX_{k} = Phi_k + Gam_k dU, k = 0..N
        nU = N * NU
        Phi = np.zeros((N + 1, NX))
        Phi[0] = x0 - X[0]
        Gam = np.zeros((N + 1, NX, nU))
        for k in range(N):
            Phi[k + 1] = A[k] @ Phi[k] + gaps[k]
            Gam[k + 1] = A[k] @ Gam[k]
            Gam[k + 1][:, k * NU:(k + 1) * NU] += B[k]
        res, Jx, res_u, Wh, _ = self._residuals(X, U, path, omega0)
        # residual Jacobian wrt dU
        E_x = np.einsum("kri,kiu->kru", Jx, Gam).reshape(-1, nU)  # ((N+1)*5, nU)
        f_x = (res + np.einsum("kri,ki->kr", Jx, Phi)).ravel()
        E_u = np.zeros((N * NU, nU))
        for k in range(N):
            E_u[k * NU:(k + 1) * NU, k * NU:(k + 1) * NU] = Wh
        f_u = res_u.ravel()
        H_u = 2.0 * (E_x.T @ E_x + E_u.T @ E_u) + 2.0 * cfg.levenberg * np.eye(nU)
        c_u = 2.0 * (E_x.T @ f_x + E_u.T @ f_u)

        K, E, G, V = self._obstacle_rows(X, obstacles, pts, radius)
        used = np.unique(E)
        ns = len(used)
        n = nU + ns
        H = np.zeros((n, n))
        H[:nU, :nU] = H_u
        H[nU:, nU:] = 2.0 * cfg.slack_penalty * np.eye(ns)
        c = np.concatenate([c_u, np.zeros(ns)])

        Arows, brows = [], []
        if len(K):
            rows = np.zeros((len(K), n))
            rows[:, :nU] = np.einsum("mi,miu->mu", G, Gam[K])
            rows[np.arange(len(K)), nU + np.searchsorted(used, E)] = 1.0
            Arows.append(rows)
            brows.append(-V - np.sum(G * Phi[K], axis=1))
        Kc, Gc, Lc = self._corridor_rows(X, canal, pts, radius + cfg.d_s, prune=self.corridor_prune)
        if len(Kc):
            rows = np.zeros((len(Kc), n))
            rows[:, :nU] = np.einsum("mi,miu->mu", Gc, Gam[Kc])
            Arows.append(rows)
            brows.append(Lc - np.sum(Gc * Phi[Kc], axis=1))
        xmin = np.asarray(cfg.x_min)
        xmax = np.asarray(cfg.x_max)
        for i in range(NX):
            if np.isfinite(xmin[i]) or np.isfinite(xmax[i]):
                G_i = Gam[1:, i, :]  # (N, nU)
                base = X[1:, i] + Phi[1:, i]
                if np.isfinite(xmin[i]):
                    Arows.append(np.hstack([G_i, np.zeros((N, ns))]))
                    brows.append(xmin[i] - base)
                if np.isfinite(xmax[i]):
                    Arows.append(np.hstack([-G_i, np.zeros((N, ns))]))
                    brows.append(base - xmax[i])
        Amat = np.vstack([np.atleast_2d(r) for r in Arows]) if Arows else np.zeros((0, n))
        bvec = np.concatenate([np.atleast_1d(b) for b in brows]) if brows else np.zeros(0)
        lo = np.concatenate([(self.u_lo - U).ravel(), np.zeros(ns)])
        hi = np.concatenate([(self.u_hi - U).ravel(), np.full(ns, np.inf)])
        qp = QuadProgram(0.5 * (H + H.T), c, Amat, bvec, lo, hi)
        sol = self.solver.solve(qp)
        if sol.status == "infeasible":
            return None
        dU = sol.z[:nU]
        U_new = np.clip(U + dU.reshape(N, NU), self.u_lo, self.u_hi)
        X_new = X + Phi + (Gam @ dU)
        X_new[0] = x0
        slack = float(np.max(sol.z[nU:])) if ns else 0.0
        return X_new, U_new, slack, sol.iterations
