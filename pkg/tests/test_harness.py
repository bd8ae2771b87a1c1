import shutil
from pathlib import Path

import numpy as np
import pytest

from didc.harness import bench
from didc.harness.cli import main
from didc.harness.runs import (
    RunSummary,
    check_expectations,
    comparison_verdicts,
    run_many,
    run_scenario,
    velocity_stats,
)
from didc.harness.scenario import ScenarioError, bundled_scenarios, load_scenario, parse_scenario
from didc.sim import SimConfig, simulate
from didc.solver import ConeQP, cone_violation, solve_qp

SHORT = """
name: short
seed: 3
duration: 0.2
controller: bc
contact_source: schedule
gait: {preset: trot}
schedule: [[0, 0, 0, 0], [0.1, 0.5, 0, 0]]
"""


def _model_path():
    import didc.rbd

    return Path(didc.rbd.__file__).parent / "data" / "go2_like.yaml"


# ---------------------------------------------------------------- scenario files


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert {"stand", "trot_05", "nspidc_fast", "desk_trot"} <= set(names)
    for n in names:
        sc = load_scenario(n)
        assert sc.name == n and len(sc.digest) == 16


def test_digest_tracks_text():
    a = parse_scenario(SHORT)
    assert parse_scenario(SHORT).digest == a.digest
    assert parse_scenario(SHORT + "\n# comment\n").digest != a.digest


@pytest.mark.parametrize(
    "extra, match",
    [
        ("bogus: 1", "unknown key"),
        ("gains: {kp: 3}", "unknown key"),
        ("expect: {finishes: true}", "unknown key"),
        ("model: does_not_exist.yaml", "does not exist"),
        ("compare: {controllers: [didc, mpc]}", "unknown controller"),
        ("gait: {preset: gallop}", "unknown gait preset"),
        ("solver: {method: simplex}", "unknown solver"),
        ("world: {mu: -1.0}", "mu"),
        ("world: {dt: 0.003}", None),
        ("planner: {k_b: -1.0}", None),
    ],
)
def test_invalid_scenarios_rejected(extra, match):
    text = "\n".join(line for line in SHORT.splitlines() if not line.startswith(extra.split(":")[0] + ":"))
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(text + "\n" + extra + "\n")


def test_bad_schedule_row_rejected():
    with pytest.raises(ScenarioError, match="schedule rows"):
        parse_scenario(SHORT.replace("[0.1, 0.5, 0, 0]", "[0.1, 0.5]"))


def test_malformed_yaml_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("name: [unterminated")
    with pytest.raises(ScenarioError):
        parse_scenario("- just\n- a list\n")


def test_model_path_relative_to_scenario(tmp_path):
    (tmp_path / "robots").mkdir()
    shutil.copy(_model_path(), tmp_path / "robots" / "dog.yaml")
    p = tmp_path / "s.yaml"
    p.write_text(SHORT + "model: robots/dog.yaml\noutput_dir: out\n")
    sc = load_scenario(str(p))
    assert sc.model().total_mass == pytest.approx(load_scenario("stand").model().total_mass)
    assert sc.output_dir == tmp_path / "out"


def test_scenario_gains():
    sc = parse_scenario(SHORT + "gains: {base_xy_kp: 50.0, base_xy_kd: 7.0}\n")
    g = sc.gains()
    assert g.kp[2] == pytest.approx(np.sqrt(1e5), rel=1e-9)
    assert g.kd[2] == pytest.approx(np.sqrt(1.0 / 1e-3 + 2 * np.sqrt(1e5)), rel=1e-9)
    assert (g.kp[0], g.kd[0]) == (50.0, 7.0)
    h = sc.gains(0.25)
    assert np.allclose(h.kp, 0.25 * g.kp) and np.allclose(h.kd, 0.5 * g.kd)


def test_sim_config_overrides():
    sc = parse_scenario(SHORT)
    cfg = sc.sim_config(controller="didc", seed=9, solver="pyramid-8", duration=0.1)
    assert (cfg.controller, cfg.seed, cfg.solver.method, cfg.duration) == ("didc", 9, "pyramid-8", 0.1)
    with pytest.raises(ValueError):
        sc.sim_config(solver="pyramid-x")


# ---------------------------------------------------------------- runs and verdicts


def test_velocity_stats_groups_by_command(model):
    r = simulate(SimConfig(model=model, duration=0.2, controller="bc", contact_source="schedule",
                           schedule=[(0, 0, 0, 0), (0.1, 0.5, 0, 0), (0.16, 0, 0, 0)]))
    stats = velocity_stats(r)
    assert [(s["vx"], s["vy"]) for s in stats] == [(0.0, 0.0), (0.5, 0.0)]
    assert sum(s["ticks"] for s in stats) == 100
    assert stats[1]["speed"] == 0.5
    # the mean of per-group means, weighted by ticks, is the run mean
    w = np.array([s["ticks"] for s in stats])
    p = np.array([s["power_mean"] for s in stats])
    assert (w @ p) / w.sum() == pytest.approx(r.metrics.power_mean, rel=1e-12)


def _summary(name, failed, err, power, slips):
    stats = [dict(vx=v[0], vy=v[1], speed=float(np.hypot(*v)), ticks=10, slip_mean=s,
                  orientation_error_mean=err, power_mean=power) for v, s in slips]
    metrics = dict(failed=failed, fail_time=float("nan"), orientation_error_mean=err, power_mean=power)
    return RunSummary("x", name, 0, metrics, stats, "")


def test_comparison_verdicts():
    didc = _summary("didc", False, 0.03, 50.0, [((0, 0), 0.001), ((0.5, 0), 0.004), ((0, -0.5), 0.005)])
    ns = _summary("nspidc", True, 0.2, 60.0, [((0, 0), 0.0001), ((0, -0.5), 0.9)])
    bc = _summary("bc", False, 0.04, 45.0, [((0, 0), 0.001)])
    v = {x.name.split()[0] + x.name.split()[1]: x for x in comparison_verdicts({"didc": didc, "nspidc": ns, "bc": bc})}
    assert v["didccompletes,"].passed
    # only (0, -0.5) has NSPIDC data at speed >= 0.5; the slower stand group is excluded
    assert v["slipnspidc"].passed and "0.9" in v["slipnspidc"].detail and "+0.50,+0.00" not in v["slipnspidc"].detail
    assert v["orientationerror"].passed
    assert not v["powerdidc"].passed
    ns.velocity_stats[1]["slip_mean"] = 0.001
    v = comparison_verdicts({"didc": didc, "nspidc": ns})
    assert not [x for x in v if x.name.startswith("slip")][0].passed


def test_slip_verdict_fails_without_overlap():
    didc = _summary("didc", False, 0.03, 50.0, [((0.5, 0), 0.004)])
    ns = _summary("nspidc", True, 0.2, 60.0, [((0, 0), 0.1)])
    v = [x for x in comparison_verdicts({"didc": didc, "nspidc": ns}) if x.name.startswith("slip")][0]
    assert not v.passed


def test_expectations():
    s = _summary("didc", False, 0.03, 50.0, [])
    checks = check_expectations(s, {"completes": True, "orientation_error_mean_below": 0.05})
    assert all(ok for _, ok in checks)
    checks = check_expectations(s, {"falls": True, "orientation_error_mean_below": 0.01})
    assert not any(ok for _, ok in checks)


def test_parallel_runs_match_serial_and_keep_order():
    sc = parse_scenario(SHORT)
    jobs = [(sc.text, "", c, 3, None, None, 0.1) for c in ("bc", "didc", "bc")]
    serial = run_many(jobs, workers=1)
    pooled = run_many(jobs, workers=2)
    assert [r.controller for r in pooled] == ["bc", "didc", "bc"]
    assert [r.csv_text for r in pooled] == [r.csv_text for r in serial]
    assert serial[0].csv_text == serial[2].csv_text


def test_same_controller_twice_gives_identical_stats():
    sc = parse_scenario(SHORT)
    a, b = run_scenario(sc, duration=0.1), run_scenario(sc, duration=0.1)
    # wall-clock solve times are the only fields allowed to differ
    keep = [k for k in a.metrics if not k.startswith("solve_time")]
    assert str([a.metrics[k] for k in keep]) == str([b.metrics[k] for k in keep])
    assert str(a.velocity_stats) == str(b.velocity_stats)
    assert a.csv_text == b.csv_text


# ---------------------------------------------------------------- solver bench


def test_pyramid_corner_violates_cone():
    # unconstrained optimum (40, 40, 100) lies inside the 4-facet pyramid (|fx|, |fy| <= 50)
    # but outside the cone (56.6 > 50)
    target = np.array([40.0, 40.0, 100.0])
    qp = ConeQP(np.eye(3), -2 * target, float(target @ target), 0.5, 0.0, 500.0, np.zeros(3))
    pyr = solve_qp(qp, "pyramid-4")
    assert np.allclose(pyr.f_star, target, atol=1e-9)
    assert np.linalg.norm(cone_violation(pyr.f_star, 0.5)) == pytest.approx(np.hypot(40, 40) - 50.0)
    g = solve_qp(qp, "gpgd")
    assert np.linalg.norm(cone_violation(g.f_star, 0.5)) <= 1e-8


def test_bench_rows_and_verdicts():
    rows = bench.run_bench(20, seed=1, solvers=("gpgd", "pyramid-4"))
    assert len(rows) == 6 and all(len(r.time) == 20 for r in rows.values())
    assert all(max(rows[("gpgd", n)].violation) <= 1e-8 for n in (2, 3, 4))
    assert any(max(rows[("pyramid-4", n)].violation) > 0 for n in (2, 3, 4))
    names = [n for n, _ in bench.bench_verdicts(rows)]
    assert len(names) == 4 and "median" in names[-1]
    assert "gpgd/pyramid-4" in bench.table(rows)


def test_bench_rejects_unknown_solver():
    with pytest.raises(ValueError):
        bench.run_bench(1, solvers=("gpgd", "ipopt"))


# ---------------------------------------------------------------- command line


def test_cli_check_dynamics(capsys):
    assert main(["check-dynamics", "--states", "5", "--energy-runs", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5


def test_cli_check_dynamics_bad_models(tmp_path, capsys):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert main(["check-dynamics", "--model", str(empty)]) == 2
    neg = tmp_path / "neg.yaml"
    neg.write_text(_model_path().read_text().replace("mass: 6.921", "mass: -6.921"))
    assert main(["check-dynamics", "--model", str(neg)]) == 2
    assert "mass must be positive" in capsys.readouterr().err
    assert main(["check-dynamics", "--model", str(tmp_path / "missing.yaml")]) == 2


def test_cli_solver_bench_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["solver-bench", "--instances", "10", "--seed", "5", "--repeats", "1",
                     "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "solver_bench.csv").read_text()
    assert a == (tmp_path / "b" / "solver_bench.csv").read_text()
    assert a.startswith("# scenario=") and "seed=5" in a.splitlines()[0]
    assert (tmp_path / "a" / "solver_timing.csv").read_text().splitlines()[0] == a.splitlines()[0]
    assert main(["solver-bench", "--solvers", "gpgd,nope", "--out", str(tmp_path)]) == 2


def test_cli_sim_run(tmp_path, capsys):
    p = tmp_path / "s.yaml"
    p.write_text(SHORT + "expect: {completes: true}\n")
    assert main(["sim-run", str(p), "--out", str(tmp_path / "o")]) == 0
    files = list((tmp_path / "o").glob("*.csv"))
    assert len(files) == 1
    head = files[0].read_text().splitlines()[0]
    assert head == f"# scenario={load_scenario(str(p)).digest} seed=3"
    p.write_text(SHORT + "expect: {falls: true}\n")
    assert main(["sim-run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert main(["sim-run", str(tmp_path / "nothing.yaml")]) == 2


def test_cli_sim_run_overrides(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(SHORT)
    assert main(["sim-run", str(p), "--controller", "didc", "--seed", "8", "--solver", "pyramid-4",
                 "--gain-scale", "0.8", "--duration", "0.05", "--out", str(tmp_path)]) == 0
    out = (tmp_path / "short_didc_seed8.csv").read_text().splitlines()
    assert out[0].endswith("seed=8") and len(out) == 2 + 25


def test_cli_compare(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(SHORT.replace("controller: bc", "controller: didc") + "compare: {controllers: [didc, bc]}\n")
    code = main(["compare", str(p), "--duration", "0.2", "--workers", "1", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert "orientation error didc < bc" in out
    assert code == (0 if "FAIL" not in "\n".join(l for l in out.splitlines() if not l.startswith("FAIL  power")) else 1)
    table = (tmp_path / "short_compare_seed3.csv").read_text().splitlines()
    assert table[0].startswith("# scenario=") and table[1].startswith("controller,vx,vy")
    assert {l.split(",")[0] for l in table[2:]} == {"didc", "bc"}
