"""Scenario execution: single runs, per-velocity statistics and matched cross-controller comparison."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..sim import COLUMNS, SimResult, metrics_csv, simulate
from .scenario import Scenario, parse_scenario


@dataclass
class RunSummary:
    scenario: str
    controller: str
    seed: int
    metrics: dict
    velocity_stats: list
    csv_text: str


def velocity_stats(result: SimResult) -> list[dict]:
    """Slip, orientation error and power grouped by commanded planar velocity, in schedule order."""
    rows = np.array(result.rows, float) if result.rows else np.zeros((0, len(COLUMNS)))
    col = {c: i for i, c in enumerate(COLUMNS)}
    if not len(rows):
        return []
    cmd = np.round(rows[:, [col["cmd_vx"], col["cmd_vy"]]], 9)
    slip = rows[:, col["slip_0"]: col["slip_0"] + 4]
    err = np.hypot(rows[:, col["err_roll"]], rows[:, col["err_pitch"]])
    out = []
    seen = []
    for c in cmd:
        key = (float(c[0]), float(c[1]))
        if key not in seen:
            seen.append(key)
    for vx, vy in seen:
        m = (cmd[:, 0] == vx) & (cmd[:, 1] == vy)
        s = slip[m]
        s = s[np.isfinite(s)]
        out.append(dict(
            vx=vx, vy=vy, speed=float(np.hypot(vx, vy)), ticks=int(m.sum()),
            slip_mean=float(s.mean()) if s.size else float("nan"),
            orientation_error_mean=float(err[m].mean()),
            power_mean=float(rows[m, col["power"]].mean()),
        ))
    return out


def run_scenario(sc: Scenario, controller: str | None = None, seed: int | None = None, solver: str | None = None,
                 gain_scale: float | None = None, duration: float | None = None) -> RunSummary:
    cfg = sc.sim_config(controller, seed, solver, gain_scale, duration)
    result = simulate(cfg)
    return RunSummary(sc.name, cfg.controller, cfg.seed, result.metrics.as_dict(), velocity_stats(result),
                      metrics_csv(result, sc.digest))


def _worker(job: tuple) -> RunSummary:
    text, path, controller, seed, solver, scale, duration = job
    sc = parse_scenario(text, Path(path) if path else None)
    return run_scenario(sc, controller, seed, solver, scale, duration)


def run_many(jobs: list[tuple], workers: int | None = None) -> list[RunSummary]:
    """Each job is (scenario text, path, controller, seed, solver, gain scale, duration).
    Results come back in job order whatever order the workers finish in."""
    workers = min(len(jobs), workers or os.cpu_count() or 1)
    if workers <= 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, jobs))


def check_expectations(summary: RunSummary, expect: dict) -> list[tuple[str, bool]]:
    m = summary.metrics
    out = []
    if "completes" in expect:
        out.append((f"completes = {bool(expect['completes'])}", (not m["failed"]) == bool(expect["completes"])))
    if "falls" in expect:
        out.append((f"falls = {bool(expect['falls'])}", m["failed"] == bool(expect["falls"])))
    if "orientation_error_mean_below" in expect:
        lim = float(expect["orientation_error_mean_below"])
        out.append((f"mean orientation error {m['orientation_error_mean']:.4f} < {lim}",
                    m["orientation_error_mean"] < lim))
    if "orientation_error_max_below" in expect:
        lim = float(expect["orientation_error_max_below"])
        rows = list(csv.reader(io.StringIO(summary.csv_text)))[2:]
        r, p = COLUMNS.index("err_roll"), COLUMNS.index("err_pitch")
        worst = max((np.hypot(float(x[r]), float(x[p])) for x in rows), default=float("nan"))
        out.append((f"max orientation error {worst:.4f} < {lim}", bool(worst < lim)))
    return out


# ---------------------------------------------------------------- comparison


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def comparison_verdicts(runs: dict[str, RunSummary], min_speed: float = 0.5) -> list[Verdict]:
    """Orderings between controllers: slip DIDC < NSPIDC per commanded velocity (where both have
    data), orientation error DIDC < BC, power DIDC <= BC, and DIDC completing within 0.1 rad."""
    out = []
    didc = runs.get("didc")
    if didc is not None:
        m = didc.metrics
        ok = not m["failed"] and m["orientation_error_mean"] < 0.1
        out.append(Verdict("didc completes, mean orientation error < 0.1 rad", ok,
                           f"failed={m['failed']} error={m['orientation_error_mean']:.4f}"))
    if didc is not None and "nspidc" in runs:
        a = {(s["vx"], s["vy"]): s for s in didc.velocity_stats}
        b = {(s["vx"], s["vy"]): s for s in runs["nspidc"].velocity_stats}
        keys = [k for k in a if k in b and a[k]["speed"] >= min_speed - 1e-9 and np.isfinite(b[k]["slip_mean"])]
        parts, ok = [], bool(keys)
        for k in keys:
            sa, sb = a[k]["slip_mean"], b[k]["slip_mean"]
            good = bool(sb > sa)
            ok &= good
            parts.append(f"v=({k[0]:+.2f},{k[1]:+.2f}) didc={sa:.5f} nspidc={sb:.5f} ratio={sb / sa:.2f}")
        out.append(Verdict("slip nspidc > didc at every commanded speed >= %.2f m/s" % min_speed, ok,
                           "; ".join(parts) or "no commanded speed with data for both"))
    if didc is not None and "bc" in runs:
        ea, eb = didc.metrics["orientation_error_mean"], runs["bc"].metrics["orientation_error_mean"]
        out.append(Verdict("orientation error didc < bc", bool(ea < eb),
                           f"didc={ea:.4f} bc={eb:.4f} reduction={(1 - ea / eb) * 100:.1f}%"))
        pa, pb = didc.metrics["power_mean"], runs["bc"].metrics["power_mean"]
        out.append(Verdict("power didc <= bc", bool(pa <= pb), f"didc={pa:.2f} W bc={pb:.2f} W"))
    return out


def velocity_table_csv(runs: dict[str, RunSummary], digest: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={digest} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["controller", "vx", "vy", "speed", "ticks", "slip_mean", "orientation_error_mean", "power_mean",
                "failed", "fail_time"])
    for name, r in runs.items():
        for s in r.velocity_stats:
            w.writerow([name, s["vx"], s["vy"], s["speed"], s["ticks"], repr(s["slip_mean"]),
                        repr(s["orientation_error_mean"]), repr(s["power_mean"]), r.metrics["failed"],
                        repr(r.metrics["fail_time"])])
    return buf.getvalue()


def compare(sc: Scenario, controllers: list[str] | None = None, seed: int | None = None,
            workers: int | None = None, duration: float | None = None) -> tuple[dict, list[Verdict]]:
    spec = sc.compare
    controllers = controllers or spec.get("controllers", ["didc", "nspidc", "bc"])
    scales = spec.get("gain_scale", {}) or {}
    path = str(sc.path) if sc.path else ""
    jobs = [(sc.text, path, c, seed, None, scales.get(c), duration) for c in controllers]
    runs = dict(zip(controllers, run_many(jobs, workers)))
    return runs, comparison_verdicts(runs, float(spec.get("min_speed", 0.5)))
