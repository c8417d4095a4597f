"""Stuck detection and the rotate-then-transit escape manoeuvre."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cbf import CanalSpec
from .dynamics import VesselParams, wrap_angle
from .geometry import (
    EllipseObstacle,
    FootprintRect,
    closest_ellipse_ellipse,
    closest_ellipse_segment,
    closest_rect_ellipse,
    ellipses_overlap,
)

INACTIVE = "inactive"
ROTATING = "rotating"
TRANSITING = "transiting"


@dataclass
class StuckDetector:
    window: int = 30
    radius: float = 0.05
    positions: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.window < 2 or self.radius <= 0:
            raise ValueError("stuck detector needs window >= 2 and radius > 0")
        self.positions = deque(self.positions, maxlen=self.window)

    def reset(self):
        self.positions.clear()


def is_stuck(d: StuckDetector, position) -> bool:
    """Push a position; true once the full window stays inside a ball of radius rho."""
    d.positions.append(np.asarray(position, float)[:2].copy())
    if len(d.positions) < d.window:
        return False
    P = np.asarray(d.positions)
    dev = np.linalg.norm(P - P.mean(axis=0), axis=1)
    return bool(dev.max() < d.radius)


def escape_heading(p_s1, p_s2, psi: float) -> float:
    """Heading normal to the anchor line, picking the rotation nearer to psi."""
    p_s1 = np.asarray(p_s1, float)
    p_s2 = np.asarray(p_s2, float)
    if np.allclose(p_s1, p_s2):
        raise ValueError("anchor points coincide")
    phi_s = np.arctan2(p_s1[1] - p_s2[1], p_s1[0] - p_s2[0])
    phi_p = wrap_angle(phi_s + np.pi / 2.0 - psi)
    phi_m = wrap_angle(phi_s - np.pi / 2.0 - psi)
    if abs(phi_p) <= abs(phi_m):
        return float(wrap_angle(phi_s + np.pi / 2.0))
    return float(wrap_angle(phi_s - np.pi / 2.0))


@dataclass
class RecoveryConfig:
    enabled: bool = True
    window: int = 30
    radius: float = 0.05
    align_tol: float = 0.1  # rad
    exit_margin: float = 0.1  # m added to r_max
    exit_cycles: int = 5
    timeout: float = 30.0  # s spent in one manoeuvre before giving up


@dataclass
class RecoveryState:
    phase: str = INACTIVE
    psi_d: float = 0.0
    kind: str = ""  # obstacle-obstacle | obstacle-boundary
    p_s1: np.ndarray | None = None
    p_s2: np.ndarray | None = None
    side0: float = 0.0
    clear_count: int = 0
    started: float = 0.0
    aligned_at: float | None = None
    transitions: list = field(default_factory=list)

    def __post_init__(self):
        if self.phase not in (INACTIVE, ROTATING, TRANSITING):
            raise ValueError(f"unknown phase {self.phase!r}")
        self.psi_d = float(wrap_angle(self.psi_d))

    @property
    def active(self) -> bool:
        return self.phase != INACTIVE

    def _set(self, phase, t):
        self.transitions.append((float(t), self.phase, phase, float(self.psi_d)))
        self.phase = phase


@dataclass
class WorldSnapshot:
    t: float
    state: np.ndarray
    obstacles: list  # EllipseObstacle, safety distance included
    canal: CanalSpec | None
    params: VesselParams
    stuck: bool


def find_anchors(state, obstacles, canal: CanalSpec | None, params: VesselParams):
    """Anchor points of the two objects pinching the hull.

    Returns (kind, p_s1, p_s2) or None when no obstacle is present.
    """
    if not obstacles:
        return None
    x = np.asarray(state, float)
    rect = FootprintRect(x[0], x[1], x[2], params.length, params.width)
    items = []
    for i, e in enumerate(obstacles):
        items.append((closest_rect_ellipse(rect, e).distance, "obstacle", i))
    if canal is not None:
        walls = canal.walls()
        x0, x1, y0, y1 = canal.bounds
        normals = {"t": (np.array([-1.0, 0.0]), -x1), "b": (np.array([1.0, 0.0]), x0),
                   "l": (np.array([0.0, 1.0]), y0), "r": (np.array([0.0, -1.0]), -y1)}
        for side, (n, off) in normals.items():
            d = float(np.min(rect.vertices() @ n) - off)
            items.append((d, "wall", side))
    items.sort(key=lambda it: (it[0], it[1], str(it[2])))
    first = next(it for it in items if it[1] == "obstacle")
    e1 = obstacles[first[2]]
    # pieces of the same physical object overlap once inflated; they do not pinch
    others = [it for it in items if it is not first
              and not (it[1] == "obstacle" and ellipses_overlap(e1, obstacles[it[2]]))]
    if not others:
        return None
    second = others[0]
    if second[1] == "obstacle":
        pair = closest_ellipse_ellipse(e1, obstacles[second[2]])
        kind = "obstacle-obstacle"
    else:
        p1, p2 = canal.walls()[second[2]]
        pair = closest_ellipse_segment(e1, p1, p2)
        kind = "obstacle-boundary"
    if np.allclose(pair.p1, pair.p2):
        return None
    return kind, np.asarray(pair.p1, float), np.asarray(pair.p2, float)


def _signed_offset(p, p_s1, p_s2) -> float:
    """Signed distance of p from the anchor line (positive on the left of p_s2 -> p_s1)."""
    d = p_s1 - p_s2
    n = np.array([-d[1], d[0]]) / np.hypot(*d)
    return float((np.asarray(p)[:2] - 0.5 * (p_s1 + p_s2)) @ n)


def recovery_step(rs: RecoveryState, world: WorldSnapshot, cfg: RecoveryConfig | None = None):
    """Advance the manoeuvre one cycle; returns (use_clf, psi_d)."""
    cfg = cfg or RecoveryConfig()
    x = np.asarray(world.state, float)
    if not cfg.enabled:
        return False, rs.psi_d
    if rs.phase == INACTIVE:
        if not world.stuck:
            return False, rs.psi_d
        anchors = find_anchors(x, world.obstacles, world.canal, world.params)
        if anchors is None:
            return False, rs.psi_d
        rs.kind, rs.p_s1, rs.p_s2 = anchors
        try:
            rs.psi_d = escape_heading(rs.p_s1, rs.p_s2, x[2])
        except ValueError:
            pass
        rs.side0 = _signed_offset(x, rs.p_s1, rs.p_s2)
        rs.clear_count = 0
        rs.started = world.t
        rs.aligned_at = None
        rs._set(ROTATING, world.t)
    if world.t - rs.started > cfg.timeout:
        rs._set(INACTIVE, world.t)
        return False, rs.psi_d
    if rs.phase == ROTATING:
        if abs(wrap_angle(x[2] - rs.psi_d)) < cfg.align_tol:
            rs.aligned_at = world.t
            rs._set(TRANSITING, world.t)
        return True, rs.psi_d
    # transiting: leave once the hull is well past the anchor line
    off = _signed_offset(x, rs.p_s1, rs.p_s2)
    crossed = np.sign(off) != np.sign(rs.side0) or rs.side0 == 0.0
    if crossed and abs(off) > world.params.r_max + cfg.exit_margin:
        rs.clear_count += 1
    else:
        rs.clear_count = 0
    if rs.clear_count >= cfg.exit_cycles:
        rs._set(INACTIVE, world.t)
        return False, rs.psi_d
    return True, rs.psi_d
