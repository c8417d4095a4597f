import numpy as np
import pytest
from shapely.geometry import Point

from narrowpass.cbf import CanalSpec
from narrowpass.perception import (
    DetectConfig,
    OccupancyGrid,
    SensorConfig,
    TrueObstacle,
    detect,
    hits_to_world,
    scan,
    update_grid,
)

CLEAN = SensorConfig(sigma_angle=0.0, sigma_range=0.0)
CANAL = CanalSpec(4.0, 4.0, 8.0, 8.0)  # centre, length, width: spans [0, 8]^2


def _scan_all_sides(grid, obstacles, centre, dist=2.0):
    cx, cy = centre
    for pose in [(cx - dist, cy, 0.0), (cx + dist, cy, np.pi), (cx, cy + dist, -np.pi / 2), (cx, cy - dist, np.pi / 2)]:
        update_grid(grid, scan(pose, obstacles, None, CLEAN), pose)
    return grid


def test_scan_circle_example():
    hits = scan((0.0, 0.0, 0.0), [TrueObstacle("circle", 2.0, 0.0, dims=(0.5,))], None, CLEAN)
    ahead = hits[np.argmin(np.abs(hits[:, 0]))]
    assert ahead[0] == pytest.approx(0.0)
    assert ahead[1] == pytest.approx(1.5, abs=1e-9)
    # the disc subtends +-asin(0.25) from the sensor
    assert np.all(np.abs(hits[:, 0]) <= np.arcsin(0.5 / 2.0) + 1e-9)


def test_empty_world_and_walls():
    assert scan((0, 0, 0), [], None, CLEAN).shape == (0, 2)
    hits = scan((4.0, 4.0, 0.3), [], CANAL, SensorConfig())
    assert len(hits) == 360
    pts = hits_to_world(hits, (4.0, 4.0, 0.3))
    d = np.minimum.reduce([np.abs(pts[:, 0]), np.abs(pts[:, 0] - 8), np.abs(pts[:, 1]), np.abs(pts[:, 1] - 8)])
    assert d.max() < 1e-9


def test_noisy_hits_stay_near_true_boundary():
    rng = np.random.default_rng(5)
    cfg = SensorConfig()
    for _ in range(20):
        shape = str(rng.choice(["circle", "ellipse", "rectangle"]))
        dims = (0.5,) if shape == "circle" else (rng.uniform(0.2, 0.6), rng.uniform(0.1, 0.2))
        ob = TrueObstacle(shape, rng.uniform(2, 4), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi), dims=dims)
        hits = scan((0, 0, 0.1), [ob], None, cfg, rng)
        pts = hits_to_world(hits, (0, 0, 0.1))
        tol = 4 * cfg.sigma_range + hits[:, 1] * 4 * cfg.sigma_angle
        poly = ob.polygon(512).exterior
        # polygon approximation of the curved shapes adds a little
        d = np.array([poly.distance(Point(p)) for p in pts])
        assert np.all(d <= tol + 2e-3)


def test_grid_stamps_and_forgets():
    grid = OccupancyGrid.covering(CANAL, horizon=3)
    pose = (1.0, 1.0, 0.0)
    update_grid(grid, np.array([[0.0, 1.0]]), pose)
    i, j = grid.cell_of([[2.0, 1.0]])[0]
    assert grid.occupied[i, j] and grid.occupied.sum() == 1
    for k in range(3):
        update_grid(grid, np.zeros((0, 2)), pose)
        assert grid.occupied[i, j], k
    update_grid(grid, np.zeros((0, 2)), pose)
    assert not grid.occupied.any()


def test_grid_follows_moving_obstacle():
    grid = OccupancyGrid.covering(CANAL, horizon=2)
    ob = TrueObstacle("circle", 4.0, 2.0, dims=(0.3,), vx=0.5)
    pose = (4.0, 0.5, np.pi / 2)
    for _ in range(30):
        update_grid(grid, scan(pose, [ob], None, CLEAN), pose)
        ob = ob.moved(0.1)
    c = grid.centers(np.argwhere(grid.occupied))
    # only the last horizon + 1 scans survive: every cell is near the recent boundary
    d = np.hypot(c[:, 0] - ob.x, c[:, 1] - ob.y)
    assert len(c) and d.max() < 0.3 + 3 * 0.05 + grid.resolution


def test_detection_contains_grown_obstacle():
    d_s, r_min = 0.05, 0.225
    for theta in (0.0, 0.3, np.pi / 4):
        sq = TrueObstacle("rectangle", 4.3, 3.8, theta, dims=(0.4, 0.4))
        grid = _scan_all_sides(OccupancyGrid.covering(CANAL), [sq], (4.3, 3.8))
        dets = detect(grid, r_min, d_s, CANAL)
        assert dets
        boundary = np.array(sq.polygon().buffer(d_s, quad_segs=32).exterior.coords)
        for p in boundary:
            assert min(e.inflated(grid.resolution).level(p) for e in dets) <= 1.0 + 1e-9


def test_two_separated_obstacles():
    obs = [TrueObstacle("circle", 2.5, 4.0, dims=(0.2,)), TrueObstacle("circle", 5.5, 4.0, dims=(0.2,))]
    grid = OccupancyGrid.covering(CANAL)
    for c in [(2.5, 4.0), (5.5, 4.0)]:
        _scan_all_sides(grid, obs, c, dist=1.0)
    dets = detect(grid, 0.225, 0.05, CANAL, DetectConfig(split_length=10.0))
    assert len(dets) == 2
    assert sorted(round(e.x, 1) for e in dets) == [2.5, 5.5]
    assert detect(OccupancyGrid.covering(CANAL), 0.225, 0.05) == []


def test_cluster_count_non_increasing_in_margin():
    rng = np.random.default_rng(2)
    obs = [TrueObstacle("circle", x, y, dims=(0.1,)) for x, y in rng.uniform(2, 6, size=(8, 2))]
    grid = OccupancyGrid.covering(CANAL)
    for c in [(2, 2), (6, 2), (2, 6), (6, 6), (4, 4)]:
        pose = (*c, 0.0)
        update_grid(grid, scan(pose, obs, None, CLEAN), pose)
    cfg = DetectConfig(split_length=100.0, min_cells=1)
    counts = [len(detect(grid, 0.225, d, None, cfg)) for d in (0.0, 0.1, 0.3, 0.6, 1.2)]
    assert all(a >= b for a, b in zip(counts, counts[1:])), counts
    assert counts[-1] < counts[0]


def test_seeded_scan_is_deterministic():
    ob = [TrueObstacle("ellipse", 3.0, 0.5, 0.4, dims=(0.5, 0.2))]
    a = scan((0, 0, 0), ob, CANAL, SensorConfig(), np.random.default_rng(7))
    b = scan((0, 0, 0), ob, CANAL, SensorConfig(), np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_obstacle_validation():
    with pytest.raises(ValueError):
        TrueObstacle("circle", 0, 0, dims=(0.3,), vx=0.6)
    with pytest.raises(ValueError):
        TrueObstacle("triangle", 0, 0)
    with pytest.raises(ValueError):
        TrueObstacle("ellipse", 0, 0, dims=(0.3,))
    with pytest.raises(ValueError):
        SensorConfig(n_rays=4)
    with pytest.raises(ValueError):
        OccupancyGrid((0, 0), 0.0, (10, 10))
