"""Run artefacts: per-cycle CSV logs, timing tables and overhead plots.

The CSV files carry a version line so readers can reject schemas they do not
know. Wall-clock timings are kept out of them (they live in the timing table),
which makes a seeded run reproduce its CSV byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .geometry import FootprintRect

LOG_SCHEMA = "narrowpass-log v1"
BARRIER_SCHEMA = "narrowpass-barriers v1"
DETECTION_SCHEMA = "narrowpass-detections v1"

LOG_COLUMNS = (
    "t", "x", "y", "psi", "u", "v", "r",
    "u_ref_1", "u_ref_2", "u_ref_3", "u_ref_4",
    "f_1", "f_2", "f_3", "f_4",
    "y_e", "omega", "min_barrier", "min_barrier_tag", "n_detected",
    "mpc_status", "mpc_qp_iterations", "mpc_slack",
    "filter_status", "intervention", "phase", "psi_d", "stuck", "clearance",
)
BARRIER_COLUMNS = ("t", "tag", "b")
DETECTION_COLUMNS = ("t", "index", "x", "y", "theta", "a", "b")

# (label, RunLog.timings key); the first four mirror the usual per-stage breakdown
TIMING_ROWS = (
    ("MPC", "mpc"),
    ("filter QP", "filter_qp"),
    ("closest points total", "closest_points_total"),
    ("closest points per obstacle", "closest_points_per_obstacle"),
    ("perception", "perception"),
    ("full cycle", "cycle"),
)


def _f(v) -> str:
    v = float(v)
    if not np.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return f"{v:.9g}"


def log_rows(runlog) -> list[list[str]]:
    rows = []
    for rec in runlog.records:
        tag = min(rec.barriers, key=rec.barriers.get) if rec.barriers else ""
        rows.append([
            _f(rec.t), *(_f(v) for v in rec.state),
            *(_f(v) for v in rec.u_ref), *(_f(v) for v in rec.u),
            _f(rec.y_e), _f(rec.omega), _f(rec.min_barrier), tag, str(rec.n_detected),
            rec.mpc_status, str(rec.mpc_qp_iterations), _f(rec.mpc_slack),
            rec.filter_status, _f(rec.intervention), rec.phase, _f(rec.psi_d),
            str(int(rec.stuck)), _f(rec.clearance),
        ])
    return rows


def _write_csv(fh, schema: str, columns, rows):
    fh.write(f"# {schema}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)


def log_csv(runlog) -> str:
    buf = io.StringIO()
    _write_csv(buf, LOG_SCHEMA, LOG_COLUMNS, log_rows(runlog))
    return buf.getvalue()


def barrier_csv(runlog) -> str:
    rows = [[_f(rec.t), tag, _f(b)] for rec in runlog.records for tag, b in sorted(rec.barriers.items())]
    buf = io.StringIO()
    _write_csv(buf, BARRIER_SCHEMA, BARRIER_COLUMNS, rows)
    return buf.getvalue()


def detection_csv(runlog) -> str:
    rows = []
    for rec, dets in zip(runlog.records, runlog.detections):
        for i, e in enumerate(dets):
            rows.append([_f(rec.t), str(i), _f(e.x), _f(e.y), _f(e.theta), _f(e.a), _f(e.b)])
    buf = io.StringIO()
    _write_csv(buf, DETECTION_SCHEMA, DETECTION_COLUMNS, rows)
    return buf.getvalue()


def read_log_csv(path) -> tuple[list[str], list[dict]]:
    """Parse a log CSV; raises ValueError on an unknown schema line."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {LOG_SCHEMA}":
            raise ValueError(f"unsupported log schema {first!r}")
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def timing_stats(runlog) -> list[dict]:
    """Median and max in milliseconds per computation, with sample counts."""
    t = runlog.timings()
    out = []
    for label, key in TIMING_ROWS:
        v = np.asarray(t.get(key, []), float) * 1e3
        out.append({
            "computation": label,
            "median_ms": float(np.median(v)) if v.size else float("nan"),
            "max_ms": float(np.max(v)) if v.size else float("nan"),
            "samples": int(v.size),
        })
    return out


def timing_table(runlog_or_stats) -> str:
    stats = runlog_or_stats if isinstance(runlog_or_stats, list) else timing_stats(runlog_or_stats)
    lines = ["| computation | median [ms] | max [ms] | samples |", "|---|---:|---:|---:|"]
    for s in stats:
        lines.append(f"| {s['computation']} | {s['median_ms']:.3f} | {s['max_ms']:.3f} | {s['samples']} |")
    return "\n".join(lines) + "\n"


def summary_json(runlog) -> str:
    return json.dumps(runlog.summary(), indent=2, sort_keys=True, default=float) + "\n"


# ---------------------------------------------------------------------------
# plotting


def _ellipse_xy(e, n=96):
    t = np.linspace(0.0, 2.0 * np.pi, n)
    return e.point(t)


def overhead_figure(runlog, n_snapshots: int = 6):
    """Canal, obstacles, path, trajectory, hull outlines and detected ellipses."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    spec = runlog.spec
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    if spec is not None and spec.canal is not None:
        x0, x1, y0, y1 = spec.canal.bounds
        ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color="0.3", lw=1.2, label="canal")
    if spec is not None:
        s = np.linspace(0.0, spec.path.length, 200)
        P = np.array([spec.path.position(v) for v in s])
        ax.plot(P[:, 0], P[:, 1], "--", color="tab:green", lw=1.0, label="path")
    world0 = runlog.world[0] if runlog.world else (spec.world() if spec is not None else [])
    for ob in world0:
        B = ob.boundary_points(96)
        ax.fill(B[:, 0], B[:, 1], color="0.6", alpha=0.6, lw=0)
    if runlog.world and len(runlog.world) > 1:
        for ob in runlog.world[-1]:
            B = ob.boundary_points(96)
            ax.plot(np.r_[B[:, 0], B[0, 0]], np.r_[B[:, 1], B[0, 1]], color="0.4", lw=0.6, ls=":")
    if runlog.records:
        X = np.array([r.state for r in runlog.records])
        ax.plot(X[:, 0], X[:, 1], color="tab:blue", lw=1.4, label="trajectory")
        idx = np.unique(np.linspace(0, len(runlog.records) - 1, n_snapshots).round().astype(int))
        params = spec.vessel if spec is not None else None
        for k in idx:
            x = runlog.records[k].state
            if params is not None:
                V = FootprintRect(x[0], x[1], x[2], params.length, params.width).vertices()
                V = np.vstack([V, V[:1]])
                ax.plot(V[:, 0], V[:, 1], color="tab:blue", lw=0.8)
            if k < len(runlog.detections):
                for e in runlog.detections[k]:
                    E = _ellipse_xy(e)
                    ax.plot(E[:, 0], E[:, 1], color="tab:red", lw=0.5, alpha=0.7)
        hit = [r for r in runlog.records if r.clearance <= 0.0]
        if hit:
            H = np.array([r.state[:2] for r in hit])
            ax.plot(H[:, 0], H[:, 1], "x", color="k", ms=5, label="contact")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    status = "success" if runlog.success else ("collision" if runlog.collision else "incomplete")
    ax.set_title(f"{runlog.scenario} / {runlog.mode} / seed {runlog.seed}: {status}")
    ax.legend(loc="upper left", fontsize=7)
    fig.tight_layout()
    return fig


def barrier_figure(runlog):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7.0, 4.5), sharex=True)
    if runlog.records:
        t = np.array([r.t for r in runlog.records])
        a1.plot(t, [r.min_barrier for r in runlog.records], color="tab:red", lw=1.0)
        a1.axhline(0.0, color="k", lw=0.6)
        a2.plot(t, [r.clearance for r in runlog.records], color="tab:blue", lw=1.0)
    a1.set_ylabel("min barrier")
    a2.set_ylabel("clearance [m]")
    a2.set_xlabel("t [s]")
    fig.tight_layout()
    return fig


def emit(runlog, out_dir, formats=("csv", "svg-plots", "timing-table")) -> dict:
    """Write the requested artefacts into out_dir; returns {name: path}."""
    known = {"csv", "svg-plots", "timing-table"}
    bad = set(formats) - known
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}; choose from {sorted(known)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{runlog.scenario}_{runlog.mode}_s{runlog.seed}"
    written = {}
    if "csv" in formats:
        for name, text in (("log", log_csv(runlog)), ("barriers", barrier_csv(runlog)),
                           ("detections", detection_csv(runlog))):
            p = out / f"{stem}_{name}.csv"
            p.write_text(text)
            written[name] = p
        p = out / f"{stem}_summary.json"
        p.write_text(summary_json(runlog))
        written["summary"] = p
    if "timing-table" in formats:
        p = out / f"{stem}_timing.md"
        p.write_text(timing_table(runlog))
        written["timing"] = p
    if "svg-plots" in formats:
        import matplotlib.pyplot as plt

        for name, fig in (("overhead", overhead_figure(runlog)), ("barriers", barrier_figure(runlog))):
            p = out / f"{stem}_{name}.svg"
            # fixed metadata keeps the SVG stable between identical runs
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            written[f"{name}_svg"] = p
    return written
