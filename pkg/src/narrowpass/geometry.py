"""Closest-point queries between the hull rectangle, ellipses and segments, and
the attitude-dependent inflation radius."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import wrap_angle

NEWTON_MAX_ITER = 30
NEWTON_TOL = 1e-8  # m
_DENSE_FALLBACK = 4000


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class EllipseObstacle:
    """Rotated ellipse; semi-axes already include the safety distance."""

    x: float
    y: float
    theta: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.b > 0 and self.a >= self.b):
            raise ValueError(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")

    @classmethod
    def normalized(cls, x, y, theta, a, b) -> "EllipseObstacle":
        """Build from any pair of positive semi-axes, swapping so that a >= b."""
        if b > a:
            a, b, theta = b, a, theta + np.pi / 2.0
        return cls(float(x), float(y), float(wrap_angle(theta)), float(a), float(b))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def inflated(self, r: float) -> "EllipseObstacle":
        return EllipseObstacle(self.x, self.y, self.theta, self.a + r, self.b + r)

    def scaled(self, s: float) -> "EllipseObstacle":
        return EllipseObstacle(self.x * s, self.y * s, self.theta, self.a * s, self.b * s)

    def shape_matrix(self) -> np.ndarray:
        """P such that (p - c)^T P (p - c) = 1 on the boundary."""
        R = rot(self.theta)
        return R @ np.diag([1.0 / self.a**2, 1.0 / self.b**2]) @ R.T

    def level(self, pts) -> np.ndarray:
        """Quadratic form value; < 1 inside, 1 on the boundary."""
        d = np.asarray(pts, float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.shape_matrix(), d)

    def point(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        loc = np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)
        return self.center + loc @ rot(self.theta).T

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class FootprintRect:
    x: float
    y: float
    psi: float
    length: float
    width: float
    d_s: float = 0.0

    @property
    def r_min(self) -> float:
        return self.width / 2.0 + self.d_s

    @property
    def r_max(self) -> float:
        return 0.5 * float(np.hypot(self.length, self.width))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def vertices(self) -> np.ndarray:
        hl, hw = self.length / 2.0, self.width / 2.0
        loc = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return self.center + loc @ rot(self.psi).T

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices()
        return v, np.roll(v, -1, axis=0)

    def contains(self, pts) -> np.ndarray:
        loc = (np.asarray(pts, float) - self.center) @ rot(self.psi)
        return (np.abs(loc[..., 0]) <= self.length / 2.0) & (np.abs(loc[..., 1]) <= self.width / 2.0)

    def scaled(self, s: float) -> "FootprintRect":
        return FootprintRect(self.x * s, self.y * s, self.psi, self.length * s, self.width * s, self.d_s * s)


@dataclass(frozen=True)
class ClosestPair:
    """Closest points between two shapes; p1 lies on the first argument."""

    p1: np.ndarray
    p2: np.ndarray
    distance: float
    alpha: float = float("nan")
    overlap: bool = False
    degraded: bool = False

    @property
    def p_vessel(self) -> np.ndarray:
        return self.p1

    @property
    def p_obstacle(self) -> np.ndarray:
        return self.p2

    def swapped(self) -> "ClosestPair":
        return ClosestPair(self.p2, self.p1, self.distance, self.alpha, self.overlap, self.degraded)


def adaptive_radius(alpha, length: float, width: float):
    """Half the hull span projected on the direction at relative angle alpha."""
    return 0.5 * (width * np.abs(np.sin(alpha)) + length * np.abs(np.cos(alpha)))


# ---------------------------------------------------------------------------
# primitive helpers


def _segment_level_min(e: EllipseObstacle, p1, p2):
    """Minimum of the ellipse level along segments, and where it occurs."""
    P = e.shape_matrix()
    d1 = np.atleast_2d(p1) - e.center
    ab = np.atleast_2d(p2) - np.atleast_2d(p1)
    qa = np.einsum("ki,ij,kj->k", ab, P, ab)
    qb = np.einsum("ki,ij,kj->k", d1, P, ab)
    lam = np.clip(-qb / np.where(qa > 0, qa, 1.0), 0.0, 1.0)
    pts = np.atleast_2d(p1) + lam[:, None] * ab
    return e.level(pts), pts


def closest_on_ellipse(e: EllipseObstacle, pts) -> np.ndarray:
    """Nearest boundary point of an ellipse for each query point.

    Works in the ellipse frame, reflected into the first quadrant, and finds the
    root of the standard secular equation by bisection.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    R = rot(e.theta)
    loc = (pts - e.center) @ R
    sx, sy = np.sign(loc[:, 0]), np.sign(loc[:, 1])
    sx[sx == 0] = 1.0
    sy[sy == 0] = 1.0
    y0, y1 = np.abs(loc[:, 0]), np.abs(loc[:, 1])
    a, b = e.a, e.b
    out = np.empty_like(loc)
    # generic case: y1 > 0; solve F(s) = (a y0/(s+a^2))^2 + (b y1/(s+b^2))^2 - 1 = 0, s > -b^2
    gen = y1 > 1e-14
    if np.any(gen):
        g0, g1 = y0[gen], y1[gen]
        lo = -b * b + b * g1  # F(lo) >= 0
        hi = -b * b + np.sqrt((a * g0) ** 2 + (b * g1) ** 2)  # F(hi) <= 0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            F = (a * g0 / (mid + a * a)) ** 2 + (b * g1 / (mid + b * b)) ** 2 - 1.0
            lo = np.where(F > 0, mid, lo)
            hi = np.where(F > 0, hi, mid)
        s = 0.5 * (lo + hi)
        out[gen, 0] = a * a * g0 / (s + a * a)
        out[gen, 1] = b * b * g1 / (s + b * b)
    deg = ~gen
    if np.any(deg):
        g0 = y0[deg]
        lim = (a * a - b * b) / a
        den = max(a * a - b * b, 1e-300)
        x = np.where(g0 < lim, a * a * g0 / den, a)
        yy = np.where(g0 < lim, b * np.sqrt(np.clip(1.0 - (x / a) ** 2, 0.0, None)), 0.0)
        out[deg, 0] = x
        out[deg, 1] = yy
    out[:, 0] *= sx
    out[:, 1] *= sy
    return e.center + out @ R.T


def _seg_dist2_derivs(e: EllipseObstacle, t, A, Bp):
    """g(t) = squared distance from ellipse point q(t) to segment [A, B], with g', g''."""
    c, sn = np.cos(e.theta), np.sin(e.theta)
    ct, st = np.cos(t), np.sin(t)
    ex, ey = e.a * ct, e.b * st
    q = np.stack([e.x + c * ex - sn * ey, e.y + sn * ex + c * ey], -1)
    q1 = np.stack([-c * e.a * st - sn * e.b * ct, -sn * e.a * st + c * e.b * ct], -1)
    q2 = np.stack([-c * ex + sn * ey, -sn * ex - c * ey], -1)
    ab = Bp - A
    L2 = np.einsum("...i,...i->...", ab, ab)
    lam_raw = np.einsum("...i,...i->...", q - A, ab) / L2
    interior = (lam_raw > 0) & (lam_raw < 1)
    lam = np.clip(lam_raw, 0.0, 1.0)
    s = A + lam[..., None] * ab
    diff = q - s
    g = np.einsum("...i,...i->...", diff, diff)
    g1 = 2.0 * np.einsum("...i,...i->...", diff, q1)
    q1ab = np.einsum("...i,...i->...", q1, ab)
    q1q1 = np.einsum("...i,...i->...", q1, q1)
    g2 = 2.0 * (q1q1 - np.where(interior, q1ab * q1ab / L2, 0.0) + np.einsum("...i,...i->...", diff, q2))
    return g, g1, g2, q, s, np.sqrt(q1q1)


_BACKTRACK = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])


def _seg_dist2(e: EllipseObstacle, t, A, Bp):
    """Squared distance only, for line-search trials."""
    c, s_ = np.cos(e.theta), np.sin(e.theta)
    ex, ey = e.a * np.cos(t), e.b * np.sin(t)
    qx = e.x + c * ex - s_ * ey - A[..., 0]
    qy = e.y + s_ * ex + c * ey - A[..., 1]
    abx = Bp[..., 0] - A[..., 0]
    aby = Bp[..., 1] - A[..., 1]
    lam = np.clip((qx * abx + qy * aby) / (abx * abx + aby * aby), 0.0, 1.0)
    dx = qx - lam * abx
    dy = qy - lam * aby
    return dx * dx + dy * dy


def _newton_segments(e: EllipseObstacle, A, Bp):
    """Minimise the ellipse-to-segment distance for each segment row of A, B.

    Seeds the angular parameter at the centre-to-midpoint direction plus three
    quadrant offsets. Returns (dist, ellipse_pt, segment_pt, converged) per segment.
    """
    A = np.atleast_2d(A)
    Bp = np.atleast_2d(Bp)
    k = len(A)
    mid = 0.5 * (A + Bp)
    loc = (mid - e.center) @ rot(e.theta)
    t0 = np.arctan2(loc[:, 1] / e.b, loc[:, 0] / e.a)
    offsets = np.array([0.0, 0.5 * np.pi, np.pi, -0.5 * np.pi])
    t = (t0[:, None] + offsets[None, :]).ravel()
    AA = np.repeat(A, 4, axis=0)
    BB = np.repeat(Bp, 4, axis=0)
    conv = np.zeros(len(t), bool)
    g, g1, g2, q, s, speed = _seg_dist2_derivs(e, t, AA, BB)
    for _ in range(NEWTON_MAX_ITER):
        newton = g2 > 1e-12
        step = np.where(newton, -g1 / np.where(newton, g2, 1.0), -np.sign(g1) * 0.25)
        step = np.clip(step, -0.5, 0.5)
        step = np.where(conv, 0.0, step)
        # backtrack until the distance does not increase, all fractions in one batch
        tc = t[:, None] + _BACKTRACK[None, :] * step[:, None]
        ok = _seg_dist2(e, tc, AA[:, None, :], BB[:, None, :]) <= g[:, None] + 1e-15
        first = np.argmax(ok, axis=1)
        t_new = np.where(ok.any(axis=1), tc[np.arange(len(t)), first], t)
        moved = np.abs(t_new - t) * speed
        t = t_new
        g, g1, g2, q, s, speed = _seg_dist2_derivs(e, t, AA, BB)
        conv |= (moved < NEWTON_TOL) | (np.abs(g1) < 1e-14)
        if conv.all():
            break
    g = g.reshape(k, 4)
    j = np.argmin(g, axis=1)
    rows = np.arange(k) * 4 + j
    return np.sqrt(g[np.arange(k), j]), q[rows], s[rows], conv.reshape(k, 4)[np.arange(k), j]


def _dense_segments(e: EllipseObstacle, A, Bp, n: int = _DENSE_FALLBACK):
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    A = np.atleast_2d(A)
    Bp = np.atleast_2d(Bp)
    best = (np.inf, None, None)
    for a_, b_ in zip(A, Bp):
        g, _, _, q, s, _ = _seg_dist2_derivs(e, t, a_[None, :], b_[None, :])
        i = int(np.argmin(g))
        if g[i] < best[0]:
            best = (g[i], q[i], s[i])
    return np.sqrt(best[0]), best[1], best[2]


# ---------------------------------------------------------------------------
# public closest-point operations


def closest_rect_ellipse(rect: FootprintRect, e: EllipseObstacle) -> ClosestPair:
    """Closest points between the hull rectangle boundary and an ellipse.

    On overlap the distance is 0 and the witness is the rectangle point deepest
    inside the ellipse together with its nearest ellipse boundary point.
    """
    A, Bp = rect.edges()
    lev, pts = _segment_level_min(e, A, Bp)
    inside_center = e.level(rect.center) <= 1.0
    ell_in_rect = bool(rect.contains(e.center))
    if lev.min() <= 1.0 or inside_center or ell_in_rect:
        cand = np.vstack([pts, rect.center[None, :]])
        deep = cand[int(np.argmin(e.level(cand)))]
        q = closest_on_ellipse(e, deep)[0]
        v = deep - q
        phi = np.arctan2(v[1], v[0]) if np.hypot(*v) > 1e-12 else np.arctan2(e.y - rect.y, e.x - rect.x)
        return ClosestPair(deep, q, 0.0, float(wrap_angle(rect.psi - phi)), overlap=True)
    dist, qe, sp, conv = _newton_segments(e, A, Bp)
    j = int(np.argmin(dist))
    degraded = False
    if not conv[j]:
        d_dense, qd, sd = _dense_segments(e, A, Bp)
        degraded = True
        if d_dense < dist[j]:
            dist[j], qe[j], sp[j] = d_dense, qd, sd
    p_v, p_o = sp[j], qe[j]
    phi = np.arctan2(p_o[1] - p_v[1], p_o[0] - p_v[0])
    return ClosestPair(p_v, p_o, float(dist[j]), float(wrap_angle(rect.psi - phi)), degraded=degraded)


def closest_ellipse_segment(e: EllipseObstacle, p1, p2) -> ClosestPair:
    """Closest points between an ellipse (p1 of the pair) and a segment (p2)."""
    p1 = np.asarray(p1, float)
    p2 = np.asarray(p2, float)
    lev, pts = _segment_level_min(e, p1, p2)
    if lev[0] <= 1.0:
        q = closest_on_ellipse(e, pts[0])[0]
        return ClosestPair(q, pts[0], 0.0, overlap=True)
    dist, qe, sp, conv = _newton_segments(e, p1, p2)
    degraded = not bool(conv[0])
    d, q, s = float(dist[0]), qe[0], sp[0]
    if degraded:
        dd, qd, sd = _dense_segments(e, p1, p2)
        if dd < d:
            d, q, s = dd, qd, sd
    return ClosestPair(q, s, d, degraded=degraded)


def ellipses_overlap(e1: EllipseObstacle, e2: EllipseObstacle, n: int = 256) -> bool:
    if e1.level(e2.center) <= 1.0 or e2.level(e1.center) <= 1.0:
        return True
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    lv = e1.level(e2.point(t))
    i = int(np.argmin(lv))
    # polish the minimum of the level along e2's boundary
    tt = t[i]
    for _ in range(20):
        h = 1e-5
        f0, fp, fm = e1.level(e2.point([tt, tt + h, tt - h]))
        d2 = (fp - 2 * f0 + fm) / h**2
        d1 = (fp - fm) / (2 * h)
        if d2 <= 0:
            break
        step = -d1 / d2
        tt += float(np.clip(step, -0.1, 0.1))
        if abs(step) < 1e-12:
            break
    return bool(min(lv[i], e1.level(e2.point(tt))) <= 1.0)


def _ellipse_pair_newton(e1, e2, t1, t2, iters: int = 30):
    """Joint Newton on both angular parameters of |q1(t1) - q2(t2)|^2."""
    R1, R2 = rot(e1.theta), rot(e2.theta)
    for _ in range(iters):
        q1 = e1.point(t1)
        q2 = e2.point(t2)
        d1 = R1 @ np.array([-e1.a * np.sin(t1), e1.b * np.cos(t1)])
        d2 = R2 @ np.array([-e2.a * np.sin(t2), e2.b * np.cos(t2)])
        s1 = R1 @ np.array([-e1.a * np.cos(t1), -e1.b * np.sin(t1)])
        s2 = R2 @ np.array([-e2.a * np.cos(t2), -e2.b * np.sin(t2)])
        diff = q1 - q2
        g = np.array([2 * diff @ d1, -2 * diff @ d2])
        H = np.array(
            [[2 * (d1 @ d1 + diff @ s1), -2 * d1 @ d2], [-2 * d1 @ d2, 2 * (d2 @ d2 - diff @ s2)]]
        )
        try:
            if np.linalg.eigvalsh(H).min() <= 0:
                break
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        step = np.clip(step, -0.2, 0.2)
        t1n, t2n = t1 + step[0], t2 + step[1]
        if np.sum((e1.point(t1n) - e2.point(t2n)) ** 2) > diff @ diff:
            break
        t1, t2 = t1n, t2n
        if np.max(np.abs(step)) < 1e-12:
            break
    return t1, t2


def closest_ellipse_ellipse(e1: EllipseObstacle, e2: EllipseObstacle) -> ClosestPair:
    """Closest points of two disjoint ellipses by alternating projection then Newton."""
    if ellipses_overlap(e1, e2):
        mid = 0.5 * (e1.center + e2.center)
        return ClosestPair(closest_on_ellipse(e1, mid)[0], closest_on_ellipse(e2, mid)[0], 0.0, overlap=True)
    q1 = closest_on_ellipse(e1, e2.center)[0]
    q2 = closest_on_ellipse(e2, q1)[0]
    for _ in range(500):
        q1n = closest_on_ellipse(e1, q2)[0]
        q2n = closest_on_ellipse(e2, q1n)[0]
        moved = np.hypot(*(q1n - q1)) + np.hypot(*(q2n - q2))
        q1, q2 = q1n, q2n
        if moved < 1e-11:
            break
    # parameters of the current points, then polish jointly
    l1 = (q1 - e1.center) @ rot(e1.theta)
    l2 = (q2 - e2.center) @ rot(e2.theta)
    t1 = np.arctan2(l1[1] / e1.b, l1[0] / e1.a)
    t2 = np.arctan2(l2[1] / e2.b, l2[0] / e2.a)
    t1, t2 = _ellipse_pair_newton(e1, e2, t1, t2)
    p1, p2 = e1.point(t1), e2.point(t2)
    if np.hypot(*(p1 - p2)) > np.hypot(*(q1 - q2)):
        p1, p2 = q1, q2
    return ClosestPair(p1, p2, float(np.hypot(*(p1 - p2))))


def rect_wall_distance(rect: FootprintRect, normal, offset: float) -> float:
    """Distance from the rectangle to the half-plane boundary n.p = offset (rect on n.p > offset side)."""
    n = np.asarray(normal, float)
    return float(np.min(rect.vertices() @ n) - offset)
