"""Small dense strictly convex QP solver.

    minimise    0.5 z^T H z + c^T z
    subject to  A z >= b,   lo <= z <= hi

Dual active-set method (Goldfarb-Idnani): starts from the unconstrained
minimiser and adds the most violated constraint each outer iteration, so no
feasible starting point is needed. A warm-start active set is tried first by
solving its equality-constrained KKT system.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iter"


@dataclass
class QuadProgram:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, float))
        self.c = np.asarray(self.c, float).ravel()
        n = len(self.c)
        if self.H.shape != (n, n):
            raise ValueError("H and c dimensions disagree")
        if not np.allclose(self.H, self.H.T, atol=1e-9 * (1 + np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.atleast_2d(np.asarray(self.A, float)).reshape(-1, n)
        self.b = np.asarray(self.b, float).ravel()
        if len(self.b) != len(self.A):
            raise ValueError("A and b dimensions disagree")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.broadcast_to(np.asarray(self.lo, float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(np.asarray(self.hi, float), (n,)).copy()

    @property
    def n(self) -> int:
        return len(self.c)

    def rows(self):
        """All inequalities stacked as C z >= d: general rows, then finite lower, then finite upper bounds."""
        n = self.n
        eye = np.eye(n)
        li = np.flatnonzero(np.isfinite(self.lo))
        ui = np.flatnonzero(np.isfinite(self.hi))
        C = np.vstack([self.A, eye[li], -eye[ui]])
        d = np.concatenate([self.b, self.lo[li], -self.hi[ui]])
        return C, d

    def objective(self, z) -> float:
        z = np.asarray(z, float)
        return float(0.5 * z @ self.H @ z + self.c @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    active: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    iterations: int = 0
    regularization: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _factor(H):
    reg = 0.0
    n = len(H)
    scale = max(1.0, float(np.abs(np.diag(H)).max(initial=0.0)))
    for _ in range(12):
        try:
            return cho_factor(H + reg * np.eye(n), lower=True), reg
        except np.linalg.LinAlgError:
            reg = 1e-10 * scale if reg == 0.0 else reg * 10.0
    raise np.linalg.LinAlgError("Hessian is not positive semi-definite")


class QpSolver:
    """Reusable solver; keeps no state between calls except statistics."""

    def __init__(self, max_iter: int = 500, tol: float = 1e-10):
        self.max_iter = max_iter
        self.tol = tol
        self.last_iterations = 0

    def solve(self, qp: QuadProgram, warm_start=None) -> QpSolution:
        H, c = qp.H, qp.c
        n = qp.n
        C, d = qp.rows()
        norms = np.linalg.norm(C, axis=1)
        if np.any(norms == 0):
            # a zero row is either trivially satisfied or unsatisfiable
            bad = (norms == 0) & (d > self.tol)
            if np.any(bad):
                return QpSolution(np.zeros(n), INFEASIBLE)
            norms = np.where(norms == 0, 1.0, norms)
        C = C / norms[:, None]
        d = d / norms
        fac, reg = _factor(H)
        Hinv = cho_solve(fac, np.eye(n))
        Hinv = 0.5 * (Hinv + Hinv.T)
        x0 = -Hinv @ c

        active: list[int] = []
        lam = np.zeros(0)
        it = 0
        x = x0
        if warm_start:
            x, active, lam, it = self._warm(Hinv, c, C, d, x0, warm_start)

        while True:
            s = C @ x - d
            p = int(np.argmin(s)) if len(s) else -1
            if p < 0 or s[p] >= -self.tol:
                return self._finish(qp, x, active, lam, norms, it, reg)
            if it >= self.max_iter:
                sol = self._finish(qp, x, active, lam, norms, it, reg)
                sol.status = MAX_ITER
                return sol
            it += 1
            n_p = C[p]
            lam_p = 0.0
            while True:
                if active:
                    N = C[active].T
                    HN = Hinv @ N
                    Mq = N.T @ HN
                    r = np.linalg.solve(Mq, HN.T @ n_p)
                    z = Hinv @ n_p - HN @ r
                else:
                    r = np.zeros(0)
                    z = Hinv @ n_p
                t1, k = np.inf, -1
                pos = r > 1e-12
                if np.any(pos):
                    ratios = np.where(pos, lam / np.where(pos, r, 1.0), np.inf)
                    k = int(np.argmin(ratios))
                    t1 = float(ratios[k])
                zn = float(z @ n_p)
                s_p = float(n_p @ x - d[p])
                t2 = -s_p / zn if zn > 1e-14 else np.inf
                if not np.isfinite(t1) and not np.isfinite(t2):
                    # n_p is a non-positive combination of active rows: no z satisfies all of them
                    sol = self._finish(qp, x, active, lam, norms, it, reg)
                    sol.status = INFEASIBLE
                    return sol
                if not np.isfinite(t2):
                    lam = lam - t1 * r
                    lam_p += t1
                    del active[k]
                    lam = np.delete(lam, k)
                    continue
                t = min(t1, t2)
                x = x + t * z
                lam = lam - t * r
                lam_p += t
                if t2 <= t1:
                    active.append(p)
                    lam = np.append(lam, lam_p)
                    break
                del active[k]
                lam = np.delete(lam, k)

    def _warm(self, Hinv, c, C, d, x0, warm):
        m = len(d)
        active = sorted({int(i) for i in warm if 0 <= int(i) < m})
        # keep a linearly independent subset
        keep: list[int] = []
        for i in active:
            cand = keep + [i]
            if np.linalg.matrix_rank(C[cand]) == len(cand):
                keep.append(i)
        active = keep
        it = 1
        while active:
            N = C[active].T
            HN = Hinv @ N
            Mq = N.T @ HN
            lam = np.linalg.solve(Mq, d[active] + N.T @ (Hinv @ c))
            if np.all(lam >= -1e-12):
                lam = np.maximum(lam, 0.0)
                return x0 + HN @ lam, active, lam, it
            del active[int(np.argmin(lam))]
            it += 1
        return x0, [], np.zeros(0), it

    def _finish(self, qp, x, active, lam, norms, it, reg):
        self.last_iterations = it
        mult = np.asarray(lam, float) / norms[active] if active else np.zeros(0)
        return QpSolution(
            z=x,
            status=OPTIMAL,
            active=tuple(int(i) for i in active),
            multipliers=mult,
            objective=qp.objective(x),
            iterations=it,
            regularization=reg,
        )


def solve_qp(qp: QuadProgram, warm_start=None, max_iter: int = 500) -> QpSolution:
    return QpSolver(max_iter=max_iter).solve(qp, warm_start)


def kkt_residual(qp: QuadProgram, sol: QpSolution) -> float:
    """Stationarity residual ||H z + c - C_active^T lambda||_inf."""
    C, _ = qp.rows()
    g = qp.H @ sol.z + qp.c
    if sol.active:
        g = g - C[list(sol.active)].T @ sol.multipliers
    return float(np.max(np.abs(g))) if len(g) else 0.0
