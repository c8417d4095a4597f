"""Reference paths parameterised by arc length, projection and cross-track error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

_SAMPLE_STEP = 0.01  # m, resolution of the projection lookup table


@dataclass(frozen=True)
class PathErrors:
    omega: float
    y_e: float
    gamma_p: float
    dist_sq: float


class PathSpec:
    """A polyline or cubic-spline reference curve p_d(omega), omega in [0, length].

    omega is arc length in metres. Polylines use one-sided (forward) tangents at
    interior vertices.
    """

    def __init__(self, points, kind: str = "polyline"):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("path points must be an (n, 2) array")
        keep = np.ones(len(pts), bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("path needs at least two distinct points")
        if kind not in ("polyline", "cubic-spline"):
            raise ValueError(f"unknown path kind {kind!r}")
        self.kind = kind
        self.points = pts
        if kind == "polyline":
            seg = np.diff(pts, axis=0)
            seglen = np.linalg.norm(seg, axis=1)
            self._knots = np.concatenate([[0.0], np.cumsum(seglen)])
            self._seg_dir = seg / seglen[:, None]
            self.length = float(self._knots[-1])
            n = max(2, int(np.ceil(self.length / _SAMPLE_STEP)) + 1)
            s = np.unique(np.concatenate([np.linspace(0.0, self.length, n), self._knots]))
            self._s = s
            self._xy = self._eval_polyline(s)
        else:
            chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
            raw = CubicSpline(chord, pts, bc_type="natural")
            t = np.linspace(0.0, chord[-1], max(200, int(chord[-1] / 0.002)))
            xy = raw(t)
            s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
            self._spline = CubicSpline(s, xy, bc_type="not-a-knot")
            self.length = float(s[-1])
            n = max(2, int(np.ceil(self.length / _SAMPLE_STEP)) + 1)
            self._s = np.linspace(0.0, self.length, n)
            self._xy = self._spline(self._s)

    # -- evaluation -------------------------------------------------------
    def _eval_polyline(self, s):
        s = np.clip(np.asarray(s, float), 0.0, self.length)
        i = np.clip(np.searchsorted(self._knots, s, side="right") - 1, 0, len(self._seg_dir) - 1)
        return self.points[i] + (s - self._knots[i])[..., None] * self._seg_dir[i]

    def position(self, omega):
        if self.kind == "polyline":
            return self._eval_polyline(omega)
        return self._spline(np.clip(omega, 0.0, self.length))

    def tangent(self, omega):
        """First derivative dp_d/domega (unit length up to spline error)."""
        if self.kind == "polyline":
            s = np.clip(np.asarray(omega, float), 0.0, self.length)
            i = np.clip(np.searchsorted(self._knots, s, side="right") - 1, 0, len(self._seg_dir) - 1)
            return self._seg_dir[i]
        return self._spline(np.clip(omega, 0.0, self.length), 1)

    def curvature_vector(self, omega):
        if self.kind == "polyline":
            return np.zeros(np.shape(omega) + (2,))
        return self._spline(np.clip(omega, 0.0, self.length), 2)

    def heading(self, omega):
        t = self.tangent(omega)
        return np.arctan2(t[..., 1], t[..., 0])

    # -- projection -------------------------------------------------------
    def project_many(self, xy, hints, back: float = 0.5, ahead: float = 2.0):
        """Closest-point parameters for several query points.

        Each query is searched on [hint - back, hint + ahead]; ties resolve to
        the smallest omega >= hint.
        """
        xy = np.atleast_2d(np.asarray(xy, float))
        hints = np.broadcast_to(np.asarray(hints, float), (len(xy),))
        lo = np.clip(hints - back, 0.0, self.length)
        hi = np.clip(hints + ahead, 0.0, self.length)
        i0 = np.searchsorted(self._s, lo, side="left")
        i0 = np.maximum(i0 - 1, 0)
        i1 = np.minimum(np.searchsorted(self._s, hi, side="right"), len(self._s) - 1)
        width = int(np.max(i1 - i0)) + 1
        idx = i0[:, None] + np.arange(width)[None, :]
        valid = idx <= i1[:, None]
        idx = np.minimum(idx, len(self._s) - 1)
        # exact projection onto each sample segment [idx, idx+1]
        a = self._xy[idx]
        b = self._xy[np.minimum(idx + 1, len(self._s) - 1)]
        ab = b - a
        L2 = np.einsum("kij,kij->ki", ab, ab)
        lam = np.einsum("kij,kij->ki", xy[:, None, :] - a, ab) / np.where(L2 > 0, L2, 1.0)
        lam = np.clip(np.where(L2 > 0, lam, 0.0), 0.0, 1.0)
        q = a + lam[..., None] * ab
        d2 = np.sum((xy[:, None, :] - q) ** 2, axis=-1)
        d2 = np.where(valid, d2, np.inf)
        s_cand = self._s[idx] + lam * (self._s[np.minimum(idx + 1, len(self._s) - 1)] - self._s[idx])
        best = d2.min(axis=1, keepdims=True)
        tie = d2 <= best + 1e-12
        # prefer the smallest omega >= hint among ties, else the smallest tie
        ahead_tie = tie & (s_cand >= hints[:, None] - 1e-12)
        use = np.where(ahead_tie.any(axis=1, keepdims=True), ahead_tie, tie)
        s_masked = np.where(use, s_cand, np.inf)
        omega = s_masked.min(axis=1)
        if self.kind == "cubic-spline":
            omega = self._newton_polish(xy, omega, lo, hi)
        return omega

    def _newton_polish(self, xy, omega, lo, hi, iters: int = 3):
        for _ in range(iters):
            p = self._spline(omega)
            d1 = self._spline(omega, 1)
            d2 = self._spline(omega, 2)
            e = xy - p
            g = -2.0 * np.sum(e * d1, axis=-1)
            h = 2.0 * np.sum(d1 * d1, axis=-1) - 2.0 * np.sum(e * d2, axis=-1)
            step = np.where(h > 1e-9, g / np.where(h > 1e-9, h, 1.0), 0.0)
            step = np.clip(step, -_SAMPLE_STEP, _SAMPLE_STEP)
            omega = np.clip(omega - step, lo, hi)
        return omega

    def project(self, x: float, y: float, omega_hint: float = 0.0, back: float = 0.5, ahead: float = 2.0) -> float:
        """Local minimiser of (x - x_d)^2 + (y - y_d)^2 near omega_hint."""
        return float(self.project_many([[x, y]], [omega_hint], back=back, ahead=ahead)[0])

    def errors(self, x: float, y: float, omega: float) -> PathErrors:
        p = self.position(omega)
        gamma = float(self.heading(omega))
        dx, dy = x - p[0], y - p[1]
        y_e = -np.sin(gamma) * dx + np.cos(gamma) * dy
        return PathErrors(float(omega), float(y_e), gamma, float(dx * dx + dy * dy))

    def errors_many(self, xy, omega):
        """Vectorised (y_e, gamma_p) for arrays of points and parameters."""
        p = self.position(omega)
        gamma = self.heading(omega)
        d = np.asarray(xy, float) - p
        y_e = -np.sin(gamma) * d[..., 0] + np.cos(gamma) * d[..., 1]
        return y_e, gamma

    def to_dict(self) -> dict:
        return {"kind": self.kind, "points": self.points.tolist()}


class PathTracker:
    """Owns the warm-start parameter and keeps progress monotone across cycles."""

    def __init__(self, path: PathSpec, omega0: float = 0.0):
        self.path = path
        self.omega = float(omega0)
        self.progress = float(omega0)

    def update(self, x: float, y: float, speed: float = 0.0, dt: float = 0.1) -> PathErrors:
        ahead = 2.0 * abs(speed) * dt + 1.0
        omega = self.path.project(x, y, self.omega, back=0.5, ahead=ahead)
        self.omega = omega
        self.progress = max(self.progress, omega)
        return self.path.errors(x, y, omega)
