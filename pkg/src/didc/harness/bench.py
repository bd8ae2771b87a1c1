"""Solver benchmark over random stance-like force-distribution problems.

Accuracy columns (wrench residual, cone violation, iterations) are deterministic in the
seed and go to one CSV; wall-clock columns go to a second file, so the first can be
compared byte for byte between runs.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from ..solver import cone_violation, parse_method, random_instance, solve_qp

DEFAULT_SOLVERS = ("gpgd", "pyramid-4")
CONTACT_COUNTS = (2, 3, 4)
GPGD_VIOLATION_LIMIT = 1e-8
GPGD_MEDIAN_LIMIT = 1e-3  # seconds, n_c = 4


@dataclass
class BenchRows:
    solver: str
    n_c: int
    residual: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    own_violation: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    time: list = field(default_factory=list)


def bench_digest(n_instances: int, seed: int, solvers) -> str:
    key = f"solver-bench n={n_instances} solvers={','.join(solvers)} counts={CONTACT_COUNTS}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def run_bench(n_instances: int = 100, seed: int = 0, solvers=DEFAULT_SOLVERS, repeats: int = 1) -> dict:
    """Every solver sees the same instances. ``repeats`` > 1 keeps the fastest of several
    timings per solve, which steadies the medians on a busy machine."""
    for s in solvers:
        parse_method(s)
    rng = np.random.default_rng(seed)
    out = {(s, n): BenchRows(s, n) for n in CONTACT_COUNTS for s in solvers}
    for n_c in CONTACT_COUNTS:
        for _ in range(n_instances):
            qp = random_instance(rng, n_c).to_qp()
            for s in solvers:
                reps = [solve_qp(qp, s) for _ in range(max(1, repeats))]
                r = reps[0]
                row = out[(s, n_c)]
                row.residual.append(r.residual)
                row.violation.append(float(np.linalg.norm(cone_violation(r.f_star, qp.mu))))
                row.own_violation.append(r.violation)
                row.iterations.append(r.iterations)
                row.time.append(min(x.solve_time for x in reps))
    return out


def _ms(xs) -> str:
    return f"{np.mean(xs):.6e} +- {np.std(xs):.6e}"


def accuracy_csv(rows: dict, digest: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={digest} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solver", "n_c", "instances", "residual_mean", "residual_std", "cone_violation_mean",
                "cone_violation_std", "cone_violation_max", "own_violation_mean", "iterations_mean"])
    for r in rows.values():
        w.writerow([r.solver, r.n_c, len(r.residual), repr(float(np.mean(r.residual))),
                    repr(float(np.std(r.residual))), repr(float(np.mean(r.violation))),
                    repr(float(np.std(r.violation))), repr(float(np.max(r.violation))),
                    repr(float(np.mean(r.own_violation))), repr(float(np.mean(r.iterations)))])
    return buf.getvalue()


def timing_csv(rows: dict, digest: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={digest} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solver", "n_c", "time_mean_s", "time_std_s", "time_median_s", "median_ratio_vs_gpgd"])
    for r in rows.values():
        ref = rows.get(("gpgd", r.n_c))
        ratio = np.median(r.time) / np.median(ref.time) if ref else float("nan")
        w.writerow([r.solver, r.n_c, f"{np.mean(r.time):.3e}", f"{np.std(r.time):.3e}",
                    f"{np.median(r.time):.3e}", f"{ratio:.3f}"])
    return buf.getvalue()


def table(rows: dict) -> str:
    """Human-readable summary in the residual / time / violation layout."""
    lines = [f"{'solver':<22}{'n_c':>4}  {'residual':<30}{'time [s]':<30}{'cone violation':<30}"]
    for r in rows.values():
        lines.append(f"{r.solver:<22}{r.n_c:>4}  {_ms(r.residual):<30}{_ms(r.time):<30}{_ms(r.violation):<30}")
    for n_c in CONTACT_COUNTS:
        g = rows.get(("gpgd", n_c))
        for (s, n), r in rows.items():
            if g and n == n_c and s != "gpgd":
                lines.append(f"median time gpgd/{s} at n_c={n_c}: {np.median(g.time) / np.median(r.time):.3f}")
    return "\n".join(lines)


def bench_verdicts(rows: dict) -> list[tuple[str, bool]]:
    out = []
    for n_c in CONTACT_COUNTS:
        g = rows.get(("gpgd", n_c))
        if g is None:
            continue
        worst = max(g.violation)
        out.append((f"gpgd cone violation <= {GPGD_VIOLATION_LIMIT:g} at n_c={n_c} (worst {worst:.1e})",
                    worst <= GPGD_VIOLATION_LIMIT))
    g = rows.get(("gpgd", 4))
    if g is not None:
        med = float(np.median(g.time))
        out.append((f"gpgd median solve < 1 ms at n_c=4 ({med * 1e6:.1f} us)", med < GPGD_MEDIAN_LIMIT))
    return out
