import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowpass.path import PathSpec, PathTracker


def test_projection_on_straight_path():
    p = PathSpec([[0, 0], [10, 0]])
    w = p.project(3.0, 1.0, 2.5)
    assert np.allclose(p.position(w), [3.0, 0.0], atol=1e-6)
    w = p.project(4.0, 0.0, 3.5)
    assert p.errors(4.0, 0.0, w).dist_sq == pytest.approx(0.0, abs=1e-10)


def test_cross_track_examples():
    p = PathSpec([[0, 0], [10, 0]])
    e = p.errors(1.0, 0.5, p.project(1.0, 0.5, 0.5))
    assert e.gamma_p == pytest.approx(0.0) and e.y_e == pytest.approx(0.5)
    e = p.errors(2.0, 0.0, p.project(2.0, 0.0, 1.5))
    assert e.y_e == pytest.approx(0.0, abs=1e-12)
    q = PathSpec([[0, 0], [0, 10]])
    e = q.errors(0.5, 1.0, q.project(0.5, 1.0, 0.5))
    assert e.gamma_p == pytest.approx(np.pi / 2)
    assert e.y_e == pytest.approx(-0.5)


@given(st.floats(0.5, 9.5), st.floats(-2, 2), st.floats(-np.pi, np.pi))
def test_sign_is_left_of_tangent(s, off, heading):
    c, sn = np.cos(heading), np.sin(heading)
    p = PathSpec([[0, 0], [10 * c, 10 * sn]])
    x, y = s * c - off * sn, s * sn + off * c  # left normal is (-sin, cos)
    e = p.errors(x, y, p.project(x, y, s))
    assert e.y_e == pytest.approx(off, abs=1e-6)
    assert abs(e.y_e) == pytest.approx(np.sqrt(e.dist_sq), abs=1e-6)


def test_arc_projection_matches_dense_grid():
    th = np.linspace(0.0, np.pi / 2, 60)
    p = PathSpec(np.c_[3 * np.cos(th), 3 * np.sin(th)], kind="cubic-spline")
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, p.length, 100_000)
    P = p.position(grid)
    for _ in range(50):
        w_true = rng.uniform(0.5, p.length - 0.5)
        n = p.tangent(w_true)
        q = p.position(w_true) + rng.uniform(-0.3, 0.3) * np.array([-n[1], n[0]]) / np.hypot(*n)
        w = p.project(q[0], q[1], w_true - rng.uniform(0, 0.4))
        f = np.sum((P - q) ** 2, axis=1)
        w_dense = grid[np.argmin(f)]
        assert w == pytest.approx(w_dense, abs=1e-4)
        assert np.sum((p.position(w) - q) ** 2) <= f.min() + 1e-9


def test_tie_break_takes_smallest_ahead_of_hint():
    # a U-turn path: the point (1, 0.5) is equidistant from both legs
    p = PathSpec([[0, 0], [2, 0], [2, 1], [0, 1]])
    w = p.project(1.0, 0.5, 0.9, back=0.5, ahead=5.0)
    assert w == pytest.approx(1.0, abs=1e-6)


def test_tracker_is_monotone():
    p = PathSpec([[0, 0], [10, 0]])
    tr = PathTracker(p)
    last = 0.0
    for k in range(60):
        x = 0.04 * k
        e = tr.update(x, 0.1 * np.sin(k), speed=0.4, dt=0.1)
        assert tr.progress >= last
        assert abs(e.omega - last) <= 0.4 * 0.1 + 0.05 or k == 0
        last = tr.progress


@settings(max_examples=30)
@given(st.floats(0.2, 5.0), st.floats(-1, 1))
def test_spline_curve_endpoints(s, off):
    p = PathSpec([[0, 0], [2, 0.4], [3.5, 2.5], [4.2, 4.6], [6, 6]], kind="cubic-spline")
    assert np.allclose(p.position(0.0), [0, 0], atol=1e-6)
    assert np.allclose(p.position(p.length), [6, 6], atol=1e-6)
    t = p.tangent(min(s, p.length))
    assert np.hypot(*t) == pytest.approx(1.0, abs=1e-3)


def test_invalid_paths():
    with pytest.raises(ValueError):
        PathSpec([[0, 0]])
    with pytest.raises(ValueError):
        PathSpec([[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        PathSpec([[0, 0], [1, 0]], kind="bezier")
