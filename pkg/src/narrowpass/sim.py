"""Closed-loop simulation of the perception -> planner -> safety filter loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, box

from .cbf import (
    WALL_BEARINGS,
    BarrierConstraint,
    CanalSpec,
    clf_constraint,
    ellipse_barrier,
    filter_control,
    wall_barrier,
)
from .dynamics import IntegrationFault, VesselParams, step_rk4
from .geometry import FootprintRect, adaptive_radius, closest_rect_ellipse
from .mpc import MpcPlanner, body_points
from .path import PathTracker
from .perception import OccupancyGrid, detect, scan, update_grid
from .recovery import (
    INACTIVE,
    RecoveryState,
    StuckDetector,
    WorldSnapshot,
    is_stuck,
    recovery_step,
)
from .scenario import MODES, ScenarioSpec

log = logging.getLogger(__name__)


@dataclass
class CycleRecord:
    t: float
    state: np.ndarray
    u_ref: np.ndarray
    u: np.ndarray
    omega: float
    y_e: float
    barriers: dict  # tag -> barrier value at this state
    n_detected: int
    mpc_status: str
    mpc_qp_iterations: int
    mpc_slack: float
    filter_status: str
    intervention: float  # ||u - u_ref||
    phase: str
    psi_d: float
    stuck: bool
    clearance: float  # ground-truth hull distance to the nearest obstacle or wall
    t_mpc: float = 0.0
    t_filter: float = 0.0
    t_cp_total: float = 0.0
    t_cp_per_obstacle: list = field(default_factory=list)
    t_perception: float = 0.0
    t_cycle: float = 0.0

    @property
    def min_barrier(self) -> float:
        return min(self.barriers.values()) if self.barriers else float("inf")


@dataclass
class RunLog:
    scenario: str
    mode: str
    seed: int
    dt: float
    records: list = field(default_factory=list)
    detections: list = field(default_factory=list)  # per cycle list of EllipseObstacle
    world: list = field(default_factory=list)  # per cycle list of TrueObstacle
    completed: bool = False
    collision: bool = False
    completion_time: float | None = None
    aborted: str = ""
    stuck_events: int = 0
    transitions: list = field(default_factory=list)
    spec: ScenarioSpec | None = None

    @property
    def success(self) -> bool:
        return self.completed and not self.collision

    @property
    def min_barrier(self) -> float:
        return min((r.min_barrier for r in self.records), default=float("inf"))

    @property
    def min_clearance(self) -> float:
        return min((r.clearance for r in self.records), default=float("inf"))

    @property
    def max_abs_y_e(self) -> float:
        return max((abs(r.y_e) for r in self.records), default=0.0)

    def timings(self) -> dict:
        """Samples per computation, in seconds."""
        per_obs = [v for r in self.records for v in r.t_cp_per_obstacle]
        return {
            "mpc": np.array([r.t_mpc for r in self.records]),
            "filter_qp": np.array([r.t_filter for r in self.records]),
            "closest_points_total": np.array([r.t_cp_total for r in self.records if r.t_cp_per_obstacle]),
            "closest_points_per_obstacle": np.array(per_obs),
            "perception": np.array([r.t_perception for r in self.records]),
            "cycle": np.array([r.t_cycle for r in self.records]),
        }

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "success": self.success,
            "completed": self.completed,
            "collision": self.collision,
            "completion_time": self.completion_time,
            "min_barrier": self.min_barrier,
            "min_clearance": self.min_clearance,
            "max_abs_y_e": self.max_abs_y_e,
            "stuck_events": self.stuck_events,
            "cycles": len(self.records),
            "aborted": self.aborted,
        }


# ---------------------------------------------------------------------------
# barrier assembly per inflation mode


def build_barriers(x, detections, canal: CanalSpec | None, mode: str, params: VesselParams,
                   cfg, d_s: float):
    """HOCBF rows for every detected obstacle and wall, plus closest-point timings."""
    rows: list[BarrierConstraint] = []
    cp_times = []
    if mode == "adaptive":
        rect = FootprintRect(x[0], x[1], x[2], params.length, params.width)
        for i, e in enumerate(detections):
            t0 = time.perf_counter()
            pair = closest_rect_ellipse(rect, e)
            cp_times.append(time.perf_counter() - t0)
            r_o = float(adaptive_radius(pair.alpha, params.length, params.width))
            rows.append(ellipse_barrier(x, e, r_o, params, cfg, tag=f"obstacle-{i}"))
        if canal is not None:
            for side, bearing in WALL_BEARINGS.items():
                r = float(adaptive_radius(x[2] - bearing, params.length, params.width)) + d_s
                rows.append(wall_barrier(x, canal, side, r, params, cfg))
        return rows, cp_times
    if mode == "enclosing":
        pts, radius = np.zeros((1, 2)), params.r_max
    elif mode == "multicircle":
        from .mpc import MpcConfig

        pts, radius = body_points(params, MpcConfig(inflation="multicircle"))
    else:
        raise ValueError(f"mode must be one of {MODES}")
    for i, e in enumerate(detections):
        for j, o in enumerate(pts):
            rows.append(ellipse_barrier(x, e, radius, params, cfg, offset=o, tag=f"obstacle-{i}.{j}"))
    if canal is not None:
        for side in WALL_BEARINGS:
            for j, o in enumerate(pts):
                rows.append(wall_barrier(x, canal, side, radius + d_s, params, cfg, offset=o,
                                         tag=f"boundary-{side}.{j}"))
    return rows, cp_times


class CollisionChecker:
    """Ground truth: exact hull rectangle against true shapes and the canal box."""

    def __init__(self, canal: CanalSpec | None, params: VesselParams):
        self.params = params
        self.canal_box = box(*np.array(canal.bounds)[[0, 2, 1, 3]]) if canal is not None else None

    def hull(self, x) -> Polygon:
        return Polygon(FootprintRect(x[0], x[1], x[2], self.params.length, self.params.width).vertices())

    def check(self, x, world) -> tuple[bool, float]:
        hull = self.hull(x)
        hit = False
        clear = np.inf
        for ob in world:
            poly = ob.polygon()
            if hull.intersects(poly):
                hit = True
                clear = 0.0
            else:
                clear = min(clear, hull.distance(poly))
        if self.canal_box is not None:
            if not self.canal_box.contains(hull):
                hit = True
                clear = 0.0
            else:
                clear = min(clear, self.canal_box.exterior.distance(hull))
        return hit, float(clear)


# ---------------------------------------------------------------------------


def run(spec: ScenarioSpec, seed: int | None = None, mode: str | None = None,
        max_cycles: int | None = None, keep_world: bool = True) -> RunLog:
    """Simulate one scenario. Deterministic given the spec and seed."""
    if seed is not None:
        spec = spec.with_seed(seed)
    if mode is not None and mode != spec.mode:
        spec = spec.with_mode(mode)
    spec.check_initial()
    params = spec.vessel
    dt = spec.dt
    rng = np.random.default_rng(spec.seed)
    world = spec.world()
    grid = OccupancyGrid.covering(spec.canal, spec.grid.resolution, spec.grid.horizon)
    tracker = PathTracker(spec.path)
    planner = MpcPlanner(params, spec.mpc)
    detector = StuckDetector(spec.recovery.window, spec.recovery.radius)
    rs = RecoveryState()
    checker = CollisionChecker(spec.canal, params)
    lo, hi = params.thrust_bounds
    end = spec.path.position(spec.path.length)
    r_body = params.width / 2.0

    runlog = RunLog(spec.scenario if hasattr(spec, "scenario") else spec.name, spec.mode, spec.seed, dt, spec=spec)
    x = spec.initial_state.as_array()
    hit, clear = checker.check(x, world)
    if hit:
        runlog.collision = True
    n_cycles = int(round(spec.duration / dt))
    if max_cycles is not None:
        n_cycles = min(n_cycles, max_cycles)
    was_stuck = False
    fit_cache: dict = {}
    for k in range(n_cycles):
        t = k * dt
        t_start = time.perf_counter()
        hits = scan(x, world, spec.canal, spec.sensor, rng)
        update_grid(grid, hits, x)
        dets = detect(grid, r_body, spec.safety_distance, spec.canal, spec.detect, fit_cache)
        t_perc = time.perf_counter() - t_start

        err = tracker.update(x[0], x[1], x[3], dt)
        if np.hypot(x[0] - end[0], x[1] - end[1]) <= spec.goal_tolerance:
            runlog.completed = True
            runlog.completion_time = t
            break

        t0 = time.perf_counter()
        try:
            sol = planner.solve(x, spec.path, dets, spec.canal, err.omega)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("planner fault at t=%.1f: %s", t, exc)
            sol = planner.fallback(x)
        t_mpc = time.perf_counter() - t0
        u_ref = sol.u0

        rows, cp_times = build_barriers(x, dets, spec.canal, spec.mode, params, spec.class_k,
                                        spec.safety_distance)

        stuck = is_stuck(detector, x)
        if stuck and not was_stuck:
            runlog.stuck_events += 1
        was_stuck = stuck
        use_clf, psi_d = False, rs.psi_d
        if spec.recovery.enabled:
            before = rs.phase
            use_clf, psi_d = recovery_step(
                rs, WorldSnapshot(t, x, dets, spec.canal, params, stuck), spec.recovery)
            if rs.phase == INACTIVE and before != INACTIVE:
                detector.reset()
                was_stuck = False
        clf = clf_constraint(x, psi_d, params, spec.class_k) if use_clf else None
        fr = filter_control(u_ref, rows, lo, hi, spec.class_k, clf=clf)
        t_cycle = time.perf_counter() - t_start

        runlog.records.append(CycleRecord(
            t=t, state=x.copy(), u_ref=np.asarray(u_ref, float).copy(), u=fr.u.copy(),
            omega=err.omega, y_e=err.y_e, barriers={bc.tag: bc.b for bc in rows},
            n_detected=len(dets), mpc_status=sol.status, mpc_qp_iterations=sol.qp_iterations,
            mpc_slack=sol.slack, filter_status=fr.status,
            intervention=float(np.linalg.norm(fr.u - u_ref)), phase=rs.phase, psi_d=float(psi_d),
            stuck=stuck, clearance=clear, t_mpc=t_mpc, t_filter=fr.qp_time,
            t_cp_total=float(sum(cp_times)), t_cp_per_obstacle=list(cp_times),
            t_perception=t_perc, t_cycle=t_cycle,
        ))
        runlog.detections.append(dets)
        if keep_world:
            runlog.world.append(list(world))

        try:
            x = step_rk4(x, fr.u, params, dt)
        except IntegrationFault as exc:
            runlog.aborted = f"integration fault at t={t:.1f}: {exc}"
            break
        world = [ob.moved(dt) for ob in world]
        hit, clear = checker.check(x, world)
        if hit:
            runlog.collision = True
    runlog.transitions = list(rs.transitions)
    return runlog


def compare(spec: ScenarioSpec, modes=MODES, seed: int | None = None) -> list[dict]:
    """Run every mode on the same world and seed."""
    out = []
    for m in modes:
        rl = run(spec, seed=seed, mode=m, keep_world=False)
        row = rl.summary()
        for name, v in rl.timings().items():
            row[f"{name}_median_ms"] = float(np.median(v) * 1e3) if len(v) else float("nan")
            row[f"{name}_max_ms"] = float(np.max(v) * 1e3) if len(v) else float("nan")
        out.append(row)
    return out
