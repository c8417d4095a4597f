"""Simulated 2D LiDAR and the grid -> cluster -> ellipse detection pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .cbf import CanalSpec
from .geometry import EllipseObstacle, rot

MAX_DRIFT = 0.5  # m/s


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 360
    max_range: float = 6.0
    sigma_angle: float = 0.002
    sigma_range: float = 0.005
    rate: float = 10.0

    def __post_init__(self):
        if self.n_rays < 8 or self.max_range <= 0:
            raise ValueError("sensor needs >= 8 rays and a positive range")
        if self.sigma_angle < 0 or self.sigma_range < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class TrueObstacle:
    """Ground-truth floating object. dims: circle (r,), ellipse (a, b), rectangle (length, width)."""

    shape: str
    x: float
    y: float
    theta: float = 0.0
    dims: tuple = (0.5,)
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        need = {"circle": 1, "ellipse": 2, "rectangle": 2}
        if self.shape not in need:
            raise ValueError(f"unknown obstacle shape {self.shape!r}")
        if len(self.dims) != need[self.shape] or min(self.dims) <= 0:
            raise ValueError(f"{self.shape} needs {need[self.shape]} positive dimensions")
        if np.hypot(self.vx, self.vy) > MAX_DRIFT + 1e-12:
            raise ValueError("drift speed above the quasi-static limit")

    def moved(self, dt: float) -> "TrueObstacle":
        return TrueObstacle(self.shape, self.x + self.vx * dt, self.y + self.vy * dt, self.theta,
                            self.dims, self.vx, self.vy)

    @property
    def semi_axes(self) -> tuple[float, float]:
        if self.shape == "circle":
            return self.dims[0], self.dims[0]
        if self.shape == "ellipse":
            return self.dims[0], self.dims[1]
        return self.dims[0] / 2.0, self.dims[1] / 2.0

    def polygon(self, resolution: int = 128):
        from shapely.geometry import Polygon

        return Polygon(self.boundary_points(resolution))

    def boundary_points(self, n: int = 128) -> np.ndarray:
        a, b = self.semi_axes
        if self.shape == "rectangle":
            k = max(1, n // 4)
            s = np.linspace(-1.0, 1.0, k, endpoint=False)
            local = np.concatenate([
                np.stack([np.full(k, a), s * b], 1),
                np.stack([-s * a, np.full(k, b)], 1),
                np.stack([np.full(k, -a), -s * b], 1),
                np.stack([s * a, np.full(k, -b)], 1),
            ])
        else:
            t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
            local = np.stack([a * np.cos(t), b * np.sin(t)], 1)
        return local @ rot(self.theta).T + np.array([self.x, self.y])

    def ray_hits(self, origin, dirs) -> np.ndarray:
        """Distance along each unit direction to the first boundary crossing (inf if none)."""
        R = rot(self.theta)
        o = (np.asarray(origin, float) - np.array([self.x, self.y])) @ R
        d = np.asarray(dirs, float) @ R
        a, b = self.semi_axes
        if self.shape == "rectangle":
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (np.array([-a, -b]) - o) / d
                t2 = (np.array([a, b]) - o) / d
            tn = np.nanmax(np.minimum(t1, t2), axis=1)
            tf = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tn <= tf) & (tf > 0)
            t = np.where(tn > 0, tn, tf)
            return np.where(hit, t, np.inf)
        os_ = o / np.array([a, b])
        ds = d / np.array([a, b])
        A = np.sum(ds * ds, axis=1)
        B = 2.0 * ds @ os_
        C = os_ @ os_ - 1.0
        disc = B * B - 4 * A * C
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_lo = (-B - sq) / (2 * A)
        t_hi = (-B + sq) / (2 * A)
        t = np.where(t_lo > 0, t_lo, t_hi)
        return np.where((disc >= 0) & (t > 0), t, np.inf)

    def to_dict(self) -> dict:
        return {"shape": self.shape, "x": self.x, "y": self.y, "theta": self.theta,
                "dims": list(self.dims), "vx": self.vx, "vy": self.vy}


def _canal_hits(origin, dirs, canal: CanalSpec) -> np.ndarray:
    x0, x1, y0, y1 = canal.bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dirs[:, 0] > 0, (x1 - origin[0]) / dirs[:, 0],
                      np.where(dirs[:, 0] < 0, (x0 - origin[0]) / dirs[:, 0], np.inf))
        ty = np.where(dirs[:, 1] > 0, (y1 - origin[1]) / dirs[:, 1],
                      np.where(dirs[:, 1] < 0, (y0 - origin[1]) / dirs[:, 1], np.inf))
    return np.maximum(np.minimum(tx, ty), 0.0)


def scan(pose, obstacles, canal: CanalSpec | None, cfg: SensorConfig, rng: np.random.Generator | None = None):
    """Returns an (n, 2) array of (body-frame bearing, range) for rays that hit something."""
    x, y, psi = (float(v) for v in np.asarray(pose, float)[:3])
    bearings = np.linspace(-np.pi, np.pi, cfg.n_rays, endpoint=False)
    ang = bearings + psi
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng_ = np.full(cfg.n_rays, np.inf)
    for ob in obstacles:
        rng_ = np.minimum(rng_, ob.ray_hits((x, y), dirs))
    if canal is not None:
        rng_ = np.minimum(rng_, _canal_hits(np.array([x, y]), dirs, canal))
    hit = rng_ <= cfg.max_range
    out_b = bearings[hit]
    out_r = rng_[hit]
    if rng is not None and len(out_r):
        if cfg.sigma_angle > 0:
            out_b = out_b + rng.normal(0.0, cfg.sigma_angle, len(out_b))
        if cfg.sigma_range > 0:
            out_r = out_r + rng.normal(0.0, cfg.sigma_range, len(out_r))
    return np.stack([out_b, out_r], axis=1) if len(out_r) else np.zeros((0, 2))


def hits_to_world(hits, pose) -> np.ndarray:
    x, y, psi = (float(v) for v in np.asarray(pose, float)[:3])
    hits = np.asarray(hits, float).reshape(-1, 2)
    ang = hits[:, 0] + psi
    return np.stack([x + hits[:, 1] * np.cos(ang), y + hits[:, 1] * np.sin(ang)], axis=1)


@dataclass
class OccupancyGrid:
    origin: tuple
    resolution: float
    shape: tuple  # (nx, ny)
    horizon: int = 10
    occupied: np.ndarray = field(default=None, repr=False)
    age: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("grid resolution must be positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        if self.occupied is None:
            self.occupied = np.zeros(self.shape, bool)
        if self.age is None:
            self.age = np.zeros(self.shape, np.int32)

    @classmethod
    def covering(cls, canal: CanalSpec, resolution: float = 0.05, horizon: int = 10, margin: float = 0.5):
        x0, x1, y0, y1 = canal.bounds
        nx = int(np.ceil((x1 - x0 + 2 * margin) / resolution))
        ny = int(np.ceil((y1 - y0 + 2 * margin) / resolution))
        return cls((x0 - margin, y0 - margin), resolution, (nx, ny), horizon)

    def cell_of(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float).reshape(-1, 2)
        return np.floor((pts - np.array(self.origin)) / self.resolution).astype(int)

    def centers(self, idx) -> np.ndarray:
        return np.array(self.origin) + (np.asarray(idx, float) + 0.5) * self.resolution


def update_grid(grid: OccupancyGrid, hits, pose) -> OccupancyGrid:
    """Age every cell, stamp the new hits, forget anything older than the horizon."""
    grid.age[grid.occupied] += 1
    pts = hits_to_world(hits, pose)
    if len(pts):
        ij = grid.cell_of(pts)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < grid.shape[0]) & (ij[:, 1] >= 0) & (ij[:, 1] < grid.shape[1])
        ij = ij[ok]
        grid.occupied[ij[:, 0], ij[:, 1]] = True
        grid.age[ij[:, 0], ij[:, 1]] = 0
    expired = grid.age > grid.horizon
    grid.occupied[expired] = False
    grid.age[expired] = 0
    return grid


@dataclass(frozen=True)
class DetectConfig:
    split_length: float = 0.4
    min_cells: int = 2
    wall_band: float = 0.08  # m; hits this close to a known wall are the wall itself


def _disk(radius_cells: float) -> np.ndarray:
    k = int(np.ceil(radius_cells))
    i, j = np.mgrid[-k:k + 1, -k:k + 1]
    return i * i + j * j <= radius_cells * radius_cells


def _hull(pts) -> np.ndarray:
    try:
        return pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        return pts


def _min_area_angle(hull) -> float:
    """Orientation of the minimum-area bounding rectangle (rotating calipers)."""
    if len(hull) < 3:
        d = hull[-1] - hull[0]
        return float(np.arctan2(d[1], d[0]))
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2.0)
    R = np.stack([np.cos(angles), np.sin(angles)], 1)
    u = hull @ R.T  # (n, k) coordinates along each candidate axis
    v = hull @ np.stack([-R[:, 1], R[:, 0]], 1).T
    area = np.ptp(u, axis=0) * np.ptp(v, axis=0)
    return float(angles[int(np.argmin(area))])


def fit_ellipse_rect(pts) -> EllipseObstacle:
    """Ellipse aligned with the minimum-area bounding rectangle, centred on it,
    with the axis ratio that minimises area while containing every point."""
    pts = np.asarray(pts, float)
    hull = _hull(pts)
    th = _min_area_angle(hull)
    loc = hull @ rot(th)
    c_loc = 0.5 * (loc.min(axis=0) + loc.max(axis=0))
    u2, v2 = ((loc - c_loc) ** 2).T
    if u2.max() < 1e-18 or v2.max() < 1e-18:
        a = float(np.sqrt(max(u2.max(), v2.max(), 1e-12)))
        centre = rot(th) @ c_loc
        return EllipseObstacle.normalized(centre[0], centre[1], th if u2.max() >= v2.max() else th + np.pi / 2,
                                          a, max(a * 1e-3, 1e-6))
    # area is proportional to max_i(u_i^2 / q + v_i^2 q), convex in q > 0
    lq = np.linspace(-6.0, 6.0, 49)
    for _ in range(3):
        q = np.exp(lq)[:, None]
        f = np.max(u2[None] / q + v2[None] * q, axis=1)
        i = int(np.argmin(f))
        step = lq[1] - lq[0]
        lq = np.linspace(lq[i] - step, lq[i] + step, 49)
    q = float(np.exp(lq[24]))
    s = float(np.max(u2 / q + v2 * q)) * (1.0 + 1e-9)
    a, b = np.sqrt(s * q), np.sqrt(s / q)
    centre = rot(th) @ c_loc
    return EllipseObstacle.normalized(centre[0], centre[1], th, a, b)


def _mvee_weights(P, tol: float = 1e-8, max_iter: int = 60):
    """Primal-dual interior point on the dual of the minimum-volume ellipse problem:
    max log det(sum_i w_i q_i q_i^T) over the simplex, q_i = (p_i, 1)."""
    n = len(P)
    Q = np.vstack([P.T, np.ones(n)])
    w = np.full(n, 1.0 / n)
    m = np.einsum("ij,ji->i", Q.T, np.linalg.solve((Q * w) @ Q.T, Q))
    nu = -m.max() - 1.0
    z = -m - nu
    A = np.empty((n + 1, n + 1))
    A[:n, n] = -1.0
    A[n, :n] = 1.0
    A[n, n] = 0.0
    for _ in range(max_iter):
        K = Q.T @ np.linalg.solve((Q * w) @ Q.T, Q)
        m = np.diag(K)
        rd = -m - nu - z
        rp = 1.0 - w.sum()
        mu = w @ z / n
        if mu < tol and np.abs(rd).max() < tol and abs(rp) < tol:
            return w, True
        rc = w * z - 0.1 * mu
        A[:n, :n] = K * K
        A[np.arange(n), np.arange(n)] += z / w
        sol = np.linalg.solve(A, np.concatenate([-rd - rc / w, [rp]]))
        dw, dnu = sol[:n], sol[n]
        dz = (-rc - z * dw) / w
        neg = dw < 0
        ap = min(1.0, 0.99 * np.min(-w[neg] / dw[neg])) if neg.any() else 1.0
        neg = dz < 0
        ad = min(1.0, 0.99 * np.min(-z[neg] / dz[neg])) if neg.any() else 1.0
        w = w + ap * dw
        z = z + ad * dz
        nu = nu + ad * dnu
    return w, False


def fit_ellipse(pts) -> EllipseObstacle:
    """Minimum-area ellipse containing every point, computed on the convex hull.

    The result is rescaled so that containment is exact whatever the solver
    tolerance; degenerate inputs fall back to the rectangle-frame fit.
    """
    pts = np.asarray(pts, float)
    P = _hull(pts)
    if len(P) < 3 or min(np.ptp(P, axis=0)) < 1e-9:
        return fit_ellipse_rect(pts)
    try:
        w, _ = _mvee_weights(P)
        w = w / w.sum()
        c = P.T @ w
        S = (P.T * w) @ P - np.outer(c, c)
        A = np.linalg.inv(S) / 2.0
    except np.linalg.LinAlgError:
        return fit_ellipse_rect(pts)
    lev = np.einsum("ij,jk,ik->i", pts - c, A, pts - c)
    if not np.all(np.isfinite(lev)) or lev.max() <= 0:
        return fit_ellipse_rect(pts)
    A = A / (lev.max() * (1.0 + 1e-9))
    evals, evecs = np.linalg.eigh(A)  # ascending: first is the major axis
    a, b = 1.0 / np.sqrt(evals)
    th = float(np.arctan2(evecs[1, 0], evecs[0, 0]))
    return EllipseObstacle.normalized(c[0], c[1], th, a, b)


def _dilated_points(pts, radius: float, k: int = 24) -> np.ndarray:
    """Vertices of a polygon containing the hull of pts grown by a disk of `radius`."""
    if len(pts) >= 3:
        pts = _hull(pts)
    ang = np.arange(k) * 2.0 * np.pi / k
    ring = np.stack([np.cos(ang), np.sin(ang)], 1) * (radius / np.cos(np.pi / k))
    return (pts[:, None, :] + ring[None]).reshape(-1, 2)


def _chunks(pts, split_length: float):
    """Split a point set into equal slabs along its principal axis."""
    if len(pts) < 2:
        return [pts]
    c = pts.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((pts - c).T))
    proj = (pts - c) @ vecs[:, -1]
    n = max(1, int(np.ceil(np.ptp(proj) / split_length)))
    if n == 1:
        return [pts]
    edges = np.linspace(proj.min(), proj.max(), n + 1)
    k = np.clip(np.searchsorted(edges, proj, side="right") - 1, 0, n - 1)
    return [pts[k == i] for i in range(n) if np.any(k == i)]


def detect(grid: OccupancyGrid, r_min: float, d_s: float, canal: CanalSpec | None = None,
           cfg: DetectConfig | None = None, cache: dict | None = None) -> list[EllipseObstacle]:
    """Inflate by r_min + d_s, label 8-connected clusters, fit, deflate by r_min.

    Clusters longer than the split length are cut into slabs of occupied cells
    first; each slab is grown, fitted and deflated on its own. ``cache`` memoises
    fits by the exact set of cells, which only saves time.
    """
    cfg = cfg or DetectConfig()
    occ = grid.occupied.copy()
    if canal is not None and occ.any():
        ij = np.argwhere(occ)
        c = grid.centers(ij)
        x0, x1, y0, y1 = canal.bounds
        band = cfg.wall_band
        wall = (c[:, 0] < x0 + band) | (c[:, 0] > x1 - band) | (c[:, 1] < y0 + band) | (c[:, 1] > y1 - band)
        occ[ij[wall, 0], ij[wall, 1]] = False
    if not occ.any():
        return []
    grow = r_min + d_s
    disk = _disk(grow / grid.resolution)
    pad = disk.shape[0] // 2 + 1
    ij = np.argwhere(occ)
    lo = np.maximum(ij.min(axis=0) - pad, 0)
    hi = np.minimum(ij.max(axis=0) + pad + 1, occ.shape)
    sub = occ[lo[0]:hi[0], lo[1]:hi[1]]
    dil = ndimage.binary_dilation(sub, structure=disk)
    labels, n = ndimage.label(dil, structure=np.ones((3, 3), bool))
    out = []
    for lab in range(1, n + 1):
        cells = np.argwhere((labels == lab) & sub)
        if len(cells) < cfg.min_cells:
            continue
        pts = grid.centers(cells + lo)
        for part in _chunks(pts, cfg.split_length):
            key = (part.tobytes(), grow, r_min) if cache is not None else None
            if key is not None and key in cache:
                out.append(cache[key])
                continue
            f = fit_ellipse(_dilated_points(part, grow))
            b = max(f.b - r_min, 1e-3)
            a = max(f.a - r_min, b)
            e = EllipseObstacle(f.x, f.y, f.theta, a, b)
            if key is not None:
                if len(cache) > 4096:
                    cache.clear()
                cache[key] = e
            out.append(e)
    return out
