"""Acceptance suite. Each test prints one PASS/FAIL line with the measured numbers.

Run on its own with ``pytest -s tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest
from shapely.geometry import LineString, Polygon

import conftest
from narrowpass.dynamics import wrap_angle
from narrowpass.geometry import closest_ellipse_ellipse, closest_ellipse_segment, closest_rect_ellipse
from narrowpass.qp import QuadProgram, solve_qp
from narrowpass.recovery import ROTATING, TRANSITING
from narrowpass.report import timing_stats, timing_table
from narrowpass.scenario import BUNDLED, MODES, bundled, gate_scenario
from narrowpass.sim import run

from oracles import (
    dual_projected_gradient_batch,
    ellipse_ellipse_oracle,
    ellipse_samples,
    ellipse_segment_oracle,
    random_ellipse,
    random_qp,
    rect_ellipse_oracle,
)
from test_cbf import all_lie_errors
from test_dynamics import rk4_order
from test_geometry import rect_ellipse_cases
from test_sim import empty_canal

SEEDS = range(10)
GATES = (0.7, 0.8, 1.0, 1.1, 1.3)
_matrix: dict = {}  # (scenario, seed) -> RunLog, shared with the timing criterion


def verdict(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    print(line)
    conftest.ACCEPTANCE.append(line)
    return ok


@pytest.mark.slow
def test_c1_safety_matrix():
    t0 = time.perf_counter()
    bad = []
    worst_b = np.inf
    for name in BUNDLED:
        spec = bundled(name)
        for s in SEEDS:
            rl = run(spec, seed=s, keep_world=False)
            _matrix[(name, s)] = rl
            worst_b = min(worst_b, rl.min_barrier)
            if rl.collision or rl.min_barrier < -1e-6:
                bad.append(f"{name}/s{s}(coll={rl.collision}, minb={rl.min_barrier:.3f})")
    wall = time.perf_counter() - t0
    n_coll = sum(rl.collision for rl in _matrix.values())
    ok = not bad and wall < 300.0
    detail = (f"{len(_matrix)} runs, {n_coll} collisions, {len(bad)} runs with a collision or barrier < -1e-6, "
              f"worst barrier {worst_b:.4f}, wall {wall:.0f} s (limit 300 s)")
    if bad:
        detail += "; " + ", ".join(bad)
    assert verdict("C1 safety over 5 scenarios x 10 seeds", ok, detail)


@pytest.mark.slow
def test_c2_gate_sweep():
    res = {}
    for m in MODES:
        for g in GATES:
            rl = run(gate_scenario(g, mode=m), keep_world=False)
            res[m, g] = rl
    succ = {m: [g for g in GATES if res[m, g].success] for m in MODES}

    def smallest_passing(m):
        # smallest gate from which every wider gate also succeeds
        ok = [g for i, g in enumerate(GATES) if all(res[m, h].success for h in GATES[i:])]
        return min(ok) if ok else np.inf

    enc_fail = all(not res["enclosing", g].success for g in GATES if g < 1.006)
    ada_ok = all(res["adaptive", g].success for g in GATES if g >= 0.65)
    order = [smallest_passing(m) for m in ("adaptive", "multicircle", "enclosing")]
    ordered = order[0] <= order[1] <= order[2]
    n_coll = sum(rl.collision for rl in res.values())
    detail = (f"successful gates {succ}; smallest passable adaptive/multicircle/enclosing = {order}; "
              f"collisions {n_coll}")
    ok = verdict("C2a enclosing fails every gate < 1.006 m", enc_fail, detail)
    ok &= verdict("C2b adaptive passes every gate >= 0.65 m", ada_ok, detail)
    ok &= verdict("C2c ordering adaptive <= multicircle <= enclosing", ordered, detail)
    assert ok


@pytest.mark.slow
def test_c3_timing():
    logs = list(_matrix.values()) or [run(bundled(n), keep_world=False) for n in BUNDLED]
    merged = {}
    for rl in logs:
        for k, v in rl.timings().items():
            merged.setdefault(k, []).extend(v)

    class _Merged:
        def timings(self):
            return merged

    stats = timing_stats(_Merged())
    print()
    print(timing_table(stats), end="")
    med = {s["computation"]: s["median_ms"] for s in stats}
    limits = {"filter QP": 1.0, "full cycle": 100.0, "closest points per obstacle": 10.0}
    ok = True
    for name, lim in limits.items():
        ok &= verdict(f"C3 median {name} < {lim:g} ms", med[name] < lim,
                      f"{med[name]:.3f} ms over {len(logs)} runs")
    assert ok


@pytest.mark.slow
def test_c4_pinch_recovery():
    spec = bundled("deadlock_pinch")
    off = bundled("deadlock_pinch")
    off.recovery.enabled = False
    rl0 = run(off, keep_world=False)
    ok0 = rl0.stuck_events >= 1 and not rl0.completed
    verdict("C4a pinch without recovery: stuck fires, no completion", ok0,
            f"stuck events {rl0.stuck_events}, completed {rl0.completed}")

    rl1 = run(spec, keep_world=False)
    by_t = {round(r.t, 6): r for r in rl1.records}
    errs = [abs(wrap_angle(by_t[round(t, 6)].state[2] - psi_d))
            for t, a, b, psi_d in rl1.transitions if a == ROTATING and b == TRANSITING]
    aligned = bool(errs) and max(errs) <= 0.1
    ok1 = rl1.completed and not rl1.collision and aligned
    verdict("C4b pinch with recovery: completes, no collision, |psi - psi_d| <= 0.1 before transit", ok1,
            f"completed {rl1.completed} at {rl1.completion_time}, collision {rl1.collision}, "
            f"heading errors at transit {[round(e, 4) for e in errs]}, min barrier {rl1.min_barrier:.3f}")
    assert ok0 and ok1


def test_c5_oracles():
    # QP vs accelerated projected gradient on the dual
    rng = np.random.default_rng(2024)
    probs, objs = [], []
    for _ in range(1000):
        H, c, A, b, lo, hi = random_qp(rng)
        qp = QuadProgram(H, c, A, b, lo, hi)
        sol = solve_qp(qp)
        C, d = qp.rows()
        probs.append((H, c, C, d))
        objs.append(sol.objective if sol.ok else np.nan)
    ref, done = dual_projected_gradient_batch(probs)
    qp_err = float(np.nanmax(np.abs(np.array(objs) - ref)))
    qp_ok = done.all() and not np.isnan(objs).any() and qp_err < 1e-4
    ok = verdict("C5a QP objective vs dual projected gradient, 1000 cases, tol 1e-4", qp_ok,
                 f"max |diff| {qp_err:.2e}, oracle converged {int(done.sum())}/1000")

    # closest points vs dense boundary sampling
    errs = []
    for rect, e in rect_ellipse_cases(800, seed=7):
        errs.append(abs(closest_rect_ellipse(rect, e).distance - rect_ellipse_oracle(rect, e)))
    n = 0
    while n < 100:
        e1, e2 = random_ellipse(rng), random_ellipse(rng)
        if Polygon(ellipse_samples(e1, 720)).intersects(Polygon(ellipse_samples(e2, 720)).buffer(1e-3)):
            continue
        n += 1
        errs.append(abs(closest_ellipse_ellipse(e1, e2).distance - ellipse_ellipse_oracle(e1, e2)))
    n = 0
    while n < 100:
        e = random_ellipse(rng)
        p1, p2 = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        if Polygon(ellipse_samples(e, 720)).buffer(1e-3).intersects(LineString([p1, p2])):
            continue
        n += 1
        errs.append(abs(closest_ellipse_segment(e, p1, p2).distance - ellipse_segment_oracle(e, p1, p2)))
    cp_err = max(errs)
    ok &= verdict("C5b closest points vs dense sampling, 1000 cases, tol 1e-3 m", cp_err < 1e-3,
                  f"max |diff| {cp_err:.2e} m over {len(errs)} cases")

    worst = all_lie_errors(100, seed=0)
    lie = max(worst.values())
    ok &= verdict("C5c Lie derivatives vs finite differences, 100 states, rel tol 1e-4", lie <= 1e-4,
                  f"worst relative error {lie:.2e} ({', '.join(f'{k} {v:.1e}' for k, v in worst.items())})")

    orders, _ = rk4_order()
    ok &= verdict("C5d RK4 observed order ~ 4", bool(np.all(np.abs(orders - 4) < 0.3)),
                  f"orders {np.round(orders, 3).tolist()}")
    assert ok


def test_c6_empty_canal():
    spec = empty_canal()
    rl = run(spec, keep_world=False)
    u_end = rl.records[-1].state[3]
    u_ref = spec.mpc.u_ref
    ok = rl.completed and rl.max_abs_y_e < 0.05 and abs(u_end - u_ref) < 0.05
    assert verdict("C6 empty canal tracking", ok,
                   f"completed {rl.completed}, max |y_e| {rl.max_abs_y_e:.4f} m, "
                   f"terminal speed {u_end:.4f} vs u_ref {u_ref}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-s", "-q"]))
