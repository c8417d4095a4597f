"""Scenario files: loading, validation and the bundled set."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cbf import CanalSpec, ClassKConfig, build_boundary_barriers
from .dynamics import VesselParams, VesselState
from .geometry import FootprintRect
from .mpc import MpcConfig
from .path import PathSpec
from .perception import DetectConfig, SensorConfig, TrueObstacle
from .recovery import RecoveryConfig

BUNDLED = ("narrow_gate", "offset_double_gate", "dock_boxes", "pool_lane", "deadlock_pinch")
# shipped alongside the narrow-passage set but not part of it
EXTRAS = ("curve_6x6",)
MODES = ("adaptive", "enclosing", "multicircle")
_MPC_INFLATION = {"adaptive": "inner", "enclosing": "enclosing", "multicircle": "multicircle"}


@dataclass
class GridConfig:
    resolution: float = 0.05
    horizon: int = 10


@dataclass
class RandomizeConfig:
    """Seed-dependent perturbation applied to the obstacle layout."""

    position_sigma: float = 0.0  # m, per-axis Gaussian jitter of obstacle centres
    position_clip: float = 0.1  # m
    drift_speed: float = 0.0  # m/s, random drift heading at this speed for drifting obstacles


@dataclass
class ScenarioSpec:
    name: str
    path: PathSpec
    canal: CanalSpec
    initial_state: VesselState
    obstacles: list = field(default_factory=list)
    vessel: VesselParams = field(default_factory=VesselParams)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    class_k: ClassKConfig = field(default_factory=ClassKConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    randomize: RandomizeConfig = field(default_factory=RandomizeConfig)
    mode: str = "adaptive"
    safety_distance: float = 0.05
    duration: float = 30.0
    dt: float = 0.1
    seed: int = 0
    goal_tolerance: float = 0.15
    description: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        self.mpc.inflation = _MPC_INFLATION[self.mode]
        self.mpc.d_s = self.safety_distance

    def with_mode(self, mode: str) -> "ScenarioSpec":
        s = copy.deepcopy(self)
        s.mode = mode
        s.__post_init__()
        return s

    def with_seed(self, seed: int) -> "ScenarioSpec":
        s = copy.deepcopy(self)
        s.seed = int(seed)
        return s

    def world(self) -> list[TrueObstacle]:
        """The true obstacle layout for this seed."""
        rz = self.randomize
        if rz.position_sigma <= 0 and rz.drift_speed <= 0:
            return list(self.obstacles)
        rng = np.random.default_rng([self.seed, 7919])
        out = []
        for ob in self.obstacles:
            dx, dy = np.clip(rng.normal(0.0, rz.position_sigma, 2), -rz.position_clip, rz.position_clip) \
                if rz.position_sigma > 0 else (0.0, 0.0)
            vx, vy = ob.vx, ob.vy
            if rz.drift_speed > 0 and (ob.vx != 0.0 or ob.vy != 0.0):
                h = rng.uniform(-np.pi, np.pi)
                vx, vy = rz.drift_speed * np.cos(h), rz.drift_speed * np.sin(h)
            out.append(TrueObstacle(ob.shape, ob.x + dx, ob.y + dy, ob.theta, ob.dims, vx, vy))
        return out

    def check_initial(self):
        """Initial state inside the canal and clear of every true obstacle."""
        from shapely.geometry import Polygon

        s = self.initial_state
        rect = FootprintRect(s.x, s.y, s.psi, self.vessel.length, self.vessel.width)
        hull = Polygon(rect.vertices())
        bars = build_boundary_barriers(s.as_array(), self.canal, self.vessel, self.class_k)
        if min(b.b for b in bars) <= 0:
            raise ValueError("initial state violates a canal barrier")
        for ob in self.world():
            if hull.distance(ob.polygon()) <= self.safety_distance:
                raise ValueError("initial state too close to an obstacle")

    def to_dict(self) -> dict:
        st = self.initial_state
        return {
            "name": self.name,
            "description": self.description,
            "seed": self.seed,
            "mode": self.mode,
            "duration": self.duration,
            "dt": self.dt,
            "safety_distance": self.safety_distance,
            "goal_tolerance": self.goal_tolerance,
            "vessel": self.vessel.to_dict(),
            "initial_state": {k: getattr(st, k) for k in ("x", "y", "psi", "u", "v", "r")},
            "path": self.path.to_dict(),
            "canal": self.canal.to_dict(),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "sensor": _plain(self.sensor),
            "grid": _plain(self.grid),
            "detect": _plain(self.detect),
            "mpc": {k: v for k, v in _plain(self.mpc).items() if k not in ("inflation", "d_s")},
            "class_k": _plain(self.class_k),
            "recovery": _plain(self.recovery),
            "randomize": _plain(self.randomize),
        }


def _plain(dc) -> dict:
    out = {}
    for f in fields(dc):
        v = getattr(dc, f.name)
        if isinstance(v, tuple):
            v = [float(x) if isinstance(x, (float, np.floating)) else x for x in v]
        out[f.name] = v
    return out


def _build(cls, data: dict | None, section: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    defaults = {f.name: f.default for f in fields(cls)}
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
        elif isinstance(v, str) and isinstance(defaults.get(k), float):
            # YAML 1.1 reads "1.0e7" (no exponent sign) as a string
            try:
                data[k] = float(v)
            except ValueError:
                raise ValueError(f"[{section}] {k} must be a number, got {v!r}") from None
    return cls(**data)


TOP_LEVEL_KEYS = frozenset({
    "name", "description", "seed", "mode", "duration", "dt", "safety_distance", "goal_tolerance",
    "vessel", "initial_state", "path", "canal", "obstacles", "sensor", "grid", "detect", "mpc",
    "class_k", "recovery", "randomize",
})


def from_dict(d: dict) -> ScenarioSpec:
    if not isinstance(d, dict):
        raise ValueError("a scenario must be a mapping")
    d = dict(d)
    unknown = set(d) - TOP_LEVEL_KEYS
    if unknown:
        raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("name", "path", "canal", "initial_state"):
        if key not in d:
            raise ValueError(f"scenario is missing the [{key}] section")
    v = dict(d.get("vessel") or {})
    vessel = _build(VesselParams, v, "vessel")
    p = d["path"]
    path = PathSpec(p["points"], p.get("kind", "polyline"))
    canal = _build(CanalSpec, d["canal"], "canal")
    init = _build(VesselState, d["initial_state"], "initial_state")
    obstacles = []
    for o in d.get("obstacles") or []:
        o = dict(o)
        o["dims"] = tuple(o.get("dims", (0.5,)))
        obstacles.append(_build(TrueObstacle, o, "obstacles"))
    mpc = dict(d.get("mpc") or {})
    return ScenarioSpec(
        name=str(d["name"]),
        description=str(d.get("description", "")),
        path=path,
        canal=canal,
        initial_state=init,
        obstacles=obstacles,
        vessel=vessel,
        sensor=_build(SensorConfig, d.get("sensor"), "sensor"),
        grid=_build(GridConfig, d.get("grid"), "grid"),
        detect=_build(DetectConfig, d.get("detect"), "detect"),
        mpc=_build(MpcConfig, mpc, "mpc"),
        class_k=_build(ClassKConfig, d.get("class_k"), "class_k"),
        recovery=_build(RecoveryConfig, d.get("recovery"), "recovery"),
        randomize=_build(RandomizeConfig, d.get("randomize"), "randomize"),
        mode=str(d.get("mode", "adaptive")),
        safety_distance=float(d.get("safety_distance", 0.05)),
        duration=float(d.get("duration", 30.0)),
        dt=float(d.get("dt", 0.1)),
        seed=int(d.get("seed", 0)),
        goal_tolerance=float(d.get("goal_tolerance", 0.15)),
    )


def load_scenario(path) -> ScenarioSpec:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED + EXTRAS:
        return bundled(str(path))
    with open(p) as fh:
        return from_dict(yaml.safe_load(fh))


def save_scenario(spec: ScenarioSpec, path):
    with open(path, "w") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False)


def bundled_path(name: str):
    if name not in BUNDLED + EXTRAS:
        raise KeyError(f"no bundled scenario {name!r}; choose from {BUNDLED + EXTRAS}")
    return resources.files("narrowpass") / "scenarios" / f"{name}.yaml"


def bundled(name: str) -> ScenarioSpec:
    with bundled_path(name).open() as fh:
        return from_dict(yaml.safe_load(fh))


def gate_scenario(gap: float, mode: str = "adaptive", radius: float = 0.5, seed: int = 0) -> ScenarioSpec:
    """Straight 2.5 m lane with a gate of two round buoys leaving `gap` metres of water."""
    off = gap / 2.0 + radius
    return ScenarioSpec(
        name=f"gate_{gap:.2f}",
        description="Two round buoys across a straight lane.",
        path=PathSpec([[0.0, 0.0], [6.0, 0.0]]),
        canal=CanalSpec(3.0, 0.0, 8.0, 2.5),
        initial_state=VesselState(0.3, 0.0, 0.0, 0.3, 0.0, 0.0),
        obstacles=[TrueObstacle("circle", 3.0, off, 0.0, (radius,)),
                   TrueObstacle("circle", 3.0, -off, 0.0, (radius,))],
        mode=mode,
        duration=25.0,
        seed=seed,
    )
