"""``didc`` command line.

Exit codes: 0 when every asserted property holds, 1 when one fails, 2 for bad input
(unreadable model, malformed scenario, unknown solver).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..rbd import ModelError, load_model
from ..rbd.checks import run_suite
from ..sim import CONTROLLERS
from . import bench
from .runs import check_expectations, compare, run_scenario, velocity_table_csv
from .scenario import ScenarioError, bundled_scenarios, load_scenario

OK, FAILED, BAD_INPUT = 0, 1, 2


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    p.write_text(text)
    return p


def _status(checks) -> int:
    for label, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    return OK if all(ok for _, ok in checks) else FAILED


def cmd_check_dynamics(args) -> int:
    model = load_model(args.model)
    results = run_suite(model, n_states=args.states, n_energy=args.energy_runs, seed=args.seed)
    for r in results:
        print(r.line())
    return OK if all(r.passed for r in results) else FAILED


def cmd_solver_bench(args) -> int:
    solvers = tuple(args.solvers.split(","))
    rows = bench.run_bench(args.instances, args.seed, solvers, args.repeats)
    digest = bench.bench_digest(args.instances, args.seed, solvers)
    out = Path(args.out)
    _write(out, "solver_bench.csv", bench.accuracy_csv(rows, digest, args.seed))
    _write(out, "solver_timing.csv", bench.timing_csv(rows, digest, args.seed))
    print(bench.table(rows))
    return _status(bench.bench_verdicts(rows))


def cmd_sim_run(args) -> int:
    sc = load_scenario(args.scenario)
    summary = run_scenario(sc, args.controller, args.seed, args.solver, args.gain_scale, args.duration)
    out = Path(args.out) if args.out else sc.output_dir
    stem = f"{sc.name}_{summary.controller}_seed{summary.seed}"
    path = _write(out, stem + ".csv", summary.csv_text)
    m = summary.metrics
    print(f"scenario {sc.name} [{sc.digest}] controller={summary.controller} seed={summary.seed}")
    for k, v in m.items():
        print(f"  {k:<28}{v}")
    for s in summary.velocity_stats:
        print(f"  v=({s['vx']:+.2f},{s['vy']:+.2f})  slip={s['slip_mean']:.5f}  "
              f"orientation={s['orientation_error_mean']:.4f}  power={s['power_mean']:.2f}")
    print(f"metrics written to {path}")
    expect = sc.expect if args.controller is None or args.controller == sc.data.get("controller", "didc") else {}
    checks = check_expectations(summary, expect) if expect else [("run completes", not m["failed"])]
    return _status(checks)


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    controllers = args.controllers.split(",") if args.controllers else None
    runs, verdicts = compare(sc, controllers, args.seed, args.workers, args.duration)
    seed = sc.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else sc.output_dir
    _write(out, f"{sc.name}_compare_seed{seed}.csv", velocity_table_csv(runs, sc.digest, seed))
    for name, r in runs.items():
        _write(out, f"{sc.name}_{name}_seed{seed}.csv", r.csv_text)
        m = r.metrics
        state = f"fell at {m['fail_time']:.2f} s" if m["failed"] else "completed"
        print(f"{name:<8} {state:<16} slip={m['slip_mean']:.5f}  orientation={m['orientation_error_mean']:.4f}  "
              f"power={m['power_mean']:.2f} W")
    for v in verdicts:
        print(v.line())
    # power is reported, not asserted
    asserted = [v for v in verdicts if not v.name.startswith("power")]
    return OK if all(v.passed for v in asserted) else FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="didc", description="Quadruped whole-body control toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-dynamics", help="run the rigid-body property suite")
    c.add_argument("--model", help="robot YAML (default: bundled model)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--states", type=int, default=100)
    c.add_argument("--energy-runs", type=int, default=2)
    c.set_defaults(func=cmd_check_dynamics)

    c = sub.add_parser("solver-bench", help="compare force-distribution solvers")
    c.add_argument("--instances", type=int, default=100, help="per contact count")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--solvers", default=",".join(bench.DEFAULT_SOLVERS))
    c.add_argument("--repeats", type=int, default=3, help="timing repeats per solve (fastest kept)")
    c.add_argument("--out", default="didc_out")
    c.set_defaults(func=cmd_solver_bench)

    for name, fn, text in (("sim-run", cmd_sim_run, "run one scenario"),
                           ("compare", cmd_compare, "run a scenario under several controllers")):
        c = sub.add_parser(name, help=text)
        c.add_argument("scenario", help="YAML path or bundled name (%s)" % ", ".join(sorted(bundled_scenarios())))
        c.add_argument("--seed", type=int)
        c.add_argument("--duration", type=float)
        c.add_argument("--out", help="output directory (default: the scenario's output_dir)")
        if name == "sim-run":
            c.add_argument("--controller", choices=CONTROLLERS)
            c.add_argument("--solver", help="gpgd, pyramid-N or pyramid-N-inscribed")
            c.add_argument("--gain-scale", type=float)
        else:
            c.add_argument("--controllers", help="comma-separated subset of " + ",".join(CONTROLLERS))
            c.add_argument("--workers", type=int, default=None)
        c.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ModelError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
