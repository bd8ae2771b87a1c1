"""Scenario files: one YAML document per experiment, validated before anything runs.

Example::

    name: desk_trot
    duration: 10.0
    controller: didc
    world: {dt: 0.001, latency: [[0, 0.7], [5, 0.3]]}
    gait: {preset: trot, period: 0.5}
    gains: {scale: 1.0}
    schedule: [[0, 0, 0, 0], [0.5, 0.5, 0, 0]]

Relative paths (``model``, ``output_dir``) resolve against the scenario file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..controller import BASE_XY_KD, ControllerGains, QPWeights, SolverConfig, lqr_gains
from ..planner import GaitConfig, PlannerError, PlannerLimits
from ..rbd import ModelError, RobotModel, load_model
from ..sim import CONTROLLERS, SimConfig, WorldConfig
from ..solver import parse_method

TOP_KEYS = {
    "name", "model", "seed", "duration", "controller", "contact_source", "output_dir", "world", "gait",
    "gains", "qp", "solver", "planner", "schedule", "expect", "compare", "ik_base",
}
GAIN_KEYS = {"q1", "q2", "r", "base_xy_kp", "base_xy_kd", "scale"}
EXPECT_KEYS = {"completes", "falls", "orientation_error_mean_below", "orientation_error_max_below"}
COMPARE_KEYS = {"controllers", "gain_scale", "min_speed"}


class ScenarioError(ValueError):
    pass


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("didc.harness").joinpath("scenarios")
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def resolve(path_or_name: str) -> Path:
    """A file path, or the stem of a bundled scenario."""
    p = Path(path_or_name)
    if p.exists():
        return p
    named = bundled_scenarios()
    if path_or_name in named:
        return named[path_or_name]
    raise ScenarioError(f"no scenario file or bundled scenario named {path_or_name!r}")


def _check_keys(section: dict, allowed: set, where: str) -> None:
    extra = set(section) - allowed
    if extra:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _section(d: dict, key: str) -> dict:
    v = d.get(key) or {}
    if not isinstance(v, dict):
        raise ScenarioError(f"'{key}' must be a mapping")
    return v


@dataclass
class Scenario:
    name: str
    text: str
    data: dict
    path: Path | None = None
    output_dir: Path = field(default_factory=lambda: Path("didc_out"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def expect(self) -> dict:
        return _section(self.data, "expect")

    @property
    def compare(self) -> dict:
        return _section(self.data, "compare")

    def model(self) -> RobotModel:
        ref = self.data.get("model")
        if ref is None:
            return load_model()
        p = Path(ref)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        if not p.exists():
            raise ScenarioError(f"model file {p} does not exist")
        return load_model(p)

    def gains(self, scale: float | None = None) -> ControllerGains:
        g = _section(self.data, "gains")
        kp, kd = lqr_gains(float(g.get("q1", 100.0)), float(g.get("q2", 1.0)), float(g.get("r", 1e-3)))
        out = ControllerGains(np.full(18, kp), np.full(18, kd))
        out.kp[:2] = float(g.get("base_xy_kp", 0.0))
        out.kd[:2] = float(g.get("base_xy_kd", BASE_XY_KD))
        f = float(g.get("scale", 1.0)) if scale is None else scale
        return out.scaled(f) if f != 1.0 else out

    def sim_config(
        self, controller: str | None = None, seed: int | None = None, solver: str | None = None,
        gain_scale: float | None = None, duration: float | None = None,
    ) -> SimConfig:
        d = self.data
        world = WorldConfig(**_world_kwargs(_section(d, "world")))
        gait = _gait(_section(d, "gait"))
        limits = PlannerLimits(**_section(d, "planner"))
        qp = QPWeights(**{k: (tuple(v) if k == "S1" else v) for k, v in _section(d, "qp").items()})
        solver_cfg = SolverConfig(**_section(d, "solver"))
        if solver is not None:
            solver_cfg.method = solver
        parse_method(solver_cfg.method)
        return SimConfig(
            model=self.model(),
            world=world,
            gait=gait,
            limits=limits,
            gains=self.gains(gain_scale),
            weights=qp,
            solver=solver_cfg,
            controller=controller or d.get("controller", "didc"),
            schedule=[tuple(r) for r in d.get("schedule", [[0, 0, 0, 0]])],
            duration=float(d.get("duration", 10.0) if duration is None else duration),
            seed=self.seed if seed is None else seed,
            contact_source=d.get("contact_source", "estimate"),
            ik_base=d.get("ik_base", "measured"),
        )


def _world_kwargs(w: dict) -> dict:
    out = dict(w)
    if "gravity" in out:
        out["gravity"] = tuple(out["gravity"])
    if "latency" in out:
        out["latency"] = [tuple(b) for b in out["latency"]]
    return out


def _gait(g: dict) -> GaitConfig:
    g = dict(g)
    preset = g.pop("preset", "trot")
    if preset == "stand":
        if g:
            raise ScenarioError("the stand preset takes no parameters")
        return GaitConfig.stand()
    if preset == "trot":
        return GaitConfig.trot(**g)
    if preset == "custom":
        return GaitConfig(**g)
    raise ScenarioError(f"unknown gait preset {preset!r}")


def parse_scenario(text: str, path: Path | None = None) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a YAML mapping")
    _check_keys(data, TOP_KEYS, "scenario")
    _check_keys(_section(data, "gains"), GAIN_KEYS, "gains")
    _check_keys(_section(data, "expect"), EXPECT_KEYS, "expect")
    _check_keys(_section(data, "compare"), COMPARE_KEYS, "compare")
    name = data.get("name") or (path.stem if path else "scenario")
    out = Path(data.get("output_dir", "didc_out"))
    if not out.is_absolute() and path is not None and "output_dir" in data:
        out = path.parent / out
    sc = Scenario(str(name), text, data, path, out)
    validate(sc)
    return sc


def load_scenario(path_or_name: str) -> Scenario:
    p = resolve(path_or_name)
    return parse_scenario(p.read_text(), p)


def validate(sc: Scenario) -> None:
    """Build everything once so range and shape errors surface before a run starts."""
    d = sc.data
    for row in d.get("schedule", []) or []:
        if not isinstance(row, (list, tuple)) or len(row) != 4:
            raise ScenarioError(f"schedule rows are [t, vx, vy, wz], got {row!r}")
    for c in sc.compare.get("controllers", []):
        if c not in CONTROLLERS:
            raise ScenarioError(f"unknown controller {c!r} in compare")
    try:
        sc.sim_config()
    except ScenarioError:
        raise
    except (ModelError, PlannerError, ValueError, TypeError) as e:
        raise ScenarioError(str(e)) from e
