import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowpass.cbf import (
    BarrierConstraint,
    CanalSpec,
    ClassKConfig,
    build_boundary_barriers,
    build_obstacle_barrier,
    clf_constraint,
    ellipse_barrier,
    filter_control,
    filter_with_clf,
    wall_barrier,
)
from narrowpass.dynamics import VesselParams, rk4, wrap_angle
from narrowpass.geometry import EllipseObstacle, FootprintRect, closest_rect_ellipse

from oracles import lie_fd

P = VesselParams()
K = ClassKConfig()
LO, HI = P.thrust_bounds
CANAL = CanalSpec(0.0, 0.0, 10.0, 2.5)


def _rel(a, b, floor=1e-3):
    return abs(a - b) / max(abs(b), floor)


def random_states(n, seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([
        rng.uniform(-2, 2, n), rng.uniform(-0.8, 0.8, n), rng.uniform(-np.pi, np.pi, n),
        rng.uniform(0.05, 0.6, n) * rng.choice([-1, 1], n),
        rng.uniform(0.02, 0.3, n) * rng.choice([-1, 1], n),
        rng.uniform(0.02, 0.5, n) * rng.choice([-1, 1], n),
    ])
    return X  # velocities kept away from 0 where |.| in the drag has a kink


def lie_errors(make, x):
    """Max relative error of bdot, Lf^2 b and each Lg Lf b entry against finite differences."""
    bc = make(x)
    errs = [_rel(bc.bdot, lie_fd(lambda s: make(s).b, x, np.zeros(4), P))]
    fd0 = lie_fd(lambda s: make(s).bdot, x, np.zeros(4), P)
    errs.append(_rel(bc.lf2b, fd0))
    for j in range(4):
        u = np.zeros(4)
        u[j] = 1.0
        fdj = lie_fd(lambda s: make(s).bdot, x, u, P) - fd0
        errs.append(_rel(bc.lglfb[j], fdj))
    return max(errs)


def all_lie_errors(n=100, seed=0):
    """Worst relative error per barrier family over n random states."""
    e = EllipseObstacle(0.4, 1.7, 0.6, 0.7, 0.35)
    fams = {
        "ellipse centre": lambda s: ellipse_barrier(s, e, 0.3, P, K),
        "ellipse bow circle": lambda s: ellipse_barrier(s, e, 0.3, P, K, offset=(0.3, 0.0)),
        "wall t": lambda s: wall_barrier(s, CANAL, "t", 0.4, P, K),
        "wall r": lambda s: wall_barrier(s, CANAL, "r", 0.4, P, K, offset=(-0.3, 0.0)),
    }
    worst = {k: 0.0 for k in fams}
    worst["clf"] = 0.0
    for x in random_states(n, seed):
        for k, f in fams.items():
            worst[k] = max(worst[k], lie_errors(f, x))
        psi_d = 0.7
        clf = clf_constraint(x, psi_d, P, K)
        V = lambda s: clf_constraint(s, psi_d, P, K).V
        fd0 = lie_fd(V, x, np.zeros(4), P)
        errs = [_rel(clf.lfV, fd0)]
        for j in range(4):
            u = np.zeros(4)
            u[j] = 1.0
            errs.append(_rel(clf.lgV[j], lie_fd(V, x, u, P) - fd0))
        worst["clf"] = max(worst["clf"], max(errs))
    return worst


def test_lie_derivatives_match_finite_differences():
    worst = all_lie_errors(25, seed=4)
    assert max(worst.values()) <= 1e-4, worst


def test_stationary_far_obstacle_margin():
    x = np.zeros(6)
    e = EllipseObstacle(5, 0, 0, 0.5, 0.5)
    pair = closest_rect_ellipse(FootprintRect(0, 0, 0, P.length, P.width), e)
    bc = build_obstacle_barrier(x, e, pair, P, K)
    assert bc.b > 0 and bc.bdot == 0.0 and bc.lf2b == 0.0
    assert bc.psi2(np.zeros(4), K.k1, K.k2) == pytest.approx(K.k1 * K.k2 * bc.b)
    moving = x.copy()
    moving[3] = 0.5
    bm = build_obstacle_barrier(moving, e, pair, P, K)
    assert bm.bdot < 0
    assert bm.psi2(np.zeros(4), K.k1, K.k2) < bc.psi2(np.zeros(4), K.k1, K.k2)


def test_boundary_examples():
    bars = build_boundary_barriers(np.zeros(6), CanalSpec(0, 0, 10, 2.5), P, K)
    by = {b.tag: b.b for b in bars}
    assert by["boundary-l"] == pytest.approx(1.025) and by["boundary-r"] == pytest.approx(1.025)
    x = np.array([0, 0, np.pi / 2, 0, 0, 0])
    by = {b.tag: b.b for b in build_boundary_barriers(x, CanalSpec(0, 0, 10, 2.5), P, K)}
    assert by["boundary-l"] == pytest.approx(0.8) and by["boundary-r"] == pytest.approx(0.8)
    x = np.array([0, 3.0, 0, 0, 0, 0])
    assert min(b.b for b in build_boundary_barriers(x, CANAL, P, K)) < 0


def test_filter_passes_reference_when_unconstrained():
    u_r = np.array([1.0, -2.0, 3.0, 0.5])
    fr = filter_control(u_r, [], LO, HI, K)
    assert np.array_equal(fr.u, u_r) and fr.status == "ok"
    bars = build_boundary_barriers(np.zeros(6), CANAL, P, K)
    fr = filter_control(u_r, bars, LO, HI, K)
    assert np.linalg.norm(fr.u - u_r) == 0.0


def test_filter_single_row_projection():
    x = np.array([0, 0, 0, 0.5, 0, 0])
    e = EllipseObstacle(1.4, 0, 0, 0.3, 0.3)
    bc = ellipse_barrier(x, e, 0.45, P, K)
    g, rhs = bc.row(K.k1, K.k2)
    u_r = np.array([10.0, 10.0, 0.0, 0.0])
    assert g @ u_r < rhs
    fr = filter_control(u_r, [bc], LO, HI, K)
    expect = u_r + g * (rhs - g @ u_r) / (g @ g)
    assert np.all(expect > LO) and np.all(expect < HI)
    assert np.allclose(fr.u, expect, atol=1e-9)


def test_head_on_approach_filtered_vs_unfiltered():
    e = EllipseObstacle(2.0, 0.0, 0.0, 0.35, 0.35)
    r_o = P.length / 2.0  # head on, relative angle 0
    u_push = np.array([12.0, 12.0, 0.0, 0.0])

    def simulate(filtered):
        x = np.array([0.0, 0.0, 0.0, 0.3, 0.0, 0.0])
        bmin = np.inf
        for _ in range(100):
            bc = ellipse_barrier(x, e, r_o, P, K)
            bmin = min(bmin, bc.b)
            u = filter_control(u_push, [bc], LO, HI, K).u if filtered else u_push
            x = rk4(x, u, P, 0.1)
        return bmin

    assert simulate(True) >= -1e-6
    assert simulate(False) < 0.0


def test_clf_inactive_at_target():
    x = np.array([0, 0, 0.4, 0, 0, 0])
    clf = clf_constraint(x, 0.4, P, K)
    assert clf.V == 0.0
    u_r = np.array([1.0, 1.0, 0.0, 0.0])
    fr = filter_with_clf(u_r, [], clf, LO, HI, K)
    assert np.allclose(fr.u, u_r, atol=1e-9)


def test_clf_drives_heading_exponentially():
    psi_d = 1.2
    x = np.zeros(6)
    V0 = clf_constraint(x, psi_d, P, K).V
    dt = 0.1
    for k in range(1, 101):
        clf = clf_constraint(x, psi_d, P, K)
        fr = filter_with_clf(np.zeros(4), [], clf, LO, HI, K)
        x = rk4(x, fr.u, P, dt)
        V = clf_constraint(x, psi_d, P, K).V
        assert V <= V0 * np.exp(-K.c3 * k * dt) * 1.05 + 1e-6
    assert abs(wrap_angle(x[2] - psi_d)) < 0.03


def test_clf_never_overrides_barrier_rows():
    rng = np.random.default_rng(1)
    for x in random_states(40, 7):
        bars = build_boundary_barriers(x, CanalSpec(0, 0, 10, 3.0), P, K)
        clf = clf_constraint(x, rng.uniform(-np.pi, np.pi), P, K)
        u_r = rng.uniform(LO, HI)
        fr = filter_with_clf(u_r, bars, clf, LO, HI, K)
        if fr.status == "ok":
            assert all(b.psi2(fr.u, K.k1, K.k2) >= -1e-7 for b in bars)


def test_relaxation_ladder_and_emergency():
    # rhs = 5 (k1 + k2) + k1 k2: 11 at k2 = 1, 8 at k2 = 0.5; best g.u is 10
    bc = BarrierConstraint("obstacle", b=-1.0, bdot=-5.0, lf2b=0.0, lglfb=np.array([0.25, 0.25, 0.0, 0.0]))
    fr = filter_control(np.zeros(4), [bc], LO, HI, K)
    assert fr.status == "relaxed" and fr.relaxations == 1 and fr.events
    assert bc.psi2(fr.u, K.k1, K.k2 / 2) >= -1e-9
    hopeless = BarrierConstraint("obstacle", b=-1.0, bdot=-5.0, lf2b=0.0, lglfb=np.array([1e-3, 1e-3, 0.0, 0.0]))
    fr = filter_control(np.zeros(4), [hopeless], LO, HI, K)
    assert fr.status == "emergency"
    assert np.all(fr.u >= LO) and np.all(fr.u <= HI)
    assert np.allclose(fr.u, [HI[0], HI[1], 0.0, 0.0], atol=1e-2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_wider_canal_never_intervenes_more(seed, extra):
    rng = np.random.default_rng(seed)
    x = random_states(1, seed)[0]
    x[1] = rng.uniform(-0.5, 0.5)
    u_r = rng.uniform(LO, HI)
    narrow = CanalSpec(0, 0, 10, 2.5)
    wide = CanalSpec(0, 0, 10 + extra, 2.5 + extra)
    d1 = np.linalg.norm(filter_control(u_r, build_boundary_barriers(x, narrow, P, K), LO, HI, K).u - u_r)
    d2 = np.linalg.norm(filter_control(u_r, build_boundary_barriers(x, wide, P, K), LO, HI, K).u - u_r)
    assert d2 <= d1 + 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        ClassKConfig(k1=0.0)
    with pytest.raises(ValueError):
        CanalSpec(0, 0, -1, 2)
