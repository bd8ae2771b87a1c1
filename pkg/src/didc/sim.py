"""Desk-scale plant: full rigid-body dynamics with penalty ground contact, latency injection and run metrics.

Contact forces act on the four foot points. Normal force is a spring-damper that
never pulls; friction is Coulomb with a linear stick region below ``v_reg``. The
force terms are evaluated at the end-of-step velocity (a few Newton iterations on
the velocity update, positions explicit), which keeps the very stiff stick region
stable at 1 kHz. Without contact the step is plain semi-implicit Euler.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    ControllerGains,
    DesiredMotion,
    QPWeights,
    SolverConfig,
    balance_controller_torque,
    didc_torque,
    nspidc_torque,
)
from .estimator import ContactEstimator
from .planner import GaitConfig, Planner, PlannerLimits, VelocityCommand, acceleration_limit, leg_ik
from .rbd import (
    S_MATRIX,
    GeneralizedState,
    RobotModel,
    advance_positions,
    center_of_mass,
    contact_set,
    foot_jacobian,
    foot_positions,
    mass_matrix,
    nominal_state,
    nonlinear_effects,
    orientation_error,
    world_poses,
)

CONTROLLERS = ("didc", "nspidc", "bc")
BIN_MS = 5.0
MAX_SPEED = 1e6  # any generalized velocity beyond this is treated as numerical divergence


class SimulationError(RuntimeError):
    pass


@dataclass
class WorldConfig:
    gravity: tuple = (0.0, 0.0, -9.81)
    ground: float = 0.0
    mu: float = 0.5
    k_n: float = 3e4
    d_n: float = 1e3
    v_reg: float = 1e-3
    dt: float = 1e-3
    control_period: float = 2e-3
    latency: list = field(default_factory=lambda: [(0.0, 1.0)])  # (bin start ms, probability)
    latency_mode: str = "uniform"

    def __post_init__(self) -> None:
        self.latency = [(float(a), float(p)) for a, p in self.latency]
        probs = np.array([p for _, p in self.latency])
        if not self.latency or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("latency probabilities must be non-negative and sum to 1")
        if any(a < 0 for a, _ in self.latency):
            raise ValueError("latency bin starts must be non-negative")
        if self.dt <= 0 or self.control_period < self.dt:
            raise ValueError("need 0 < dt <= control period")
        ratio = self.control_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control period must be a whole number of physics steps")
        if self.k_n <= 0 or self.d_n <= 0 or self.v_reg <= 0 or self.mu < 0:
            raise ValueError("contact parameters must be positive (mu >= 0)")
        if self.latency_mode not in ("uniform", "start"):
            raise ValueError("latency_mode is 'uniform' or 'start'")

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.dt))


# ---------------------------------------------------------------- contact and physics


def foot_contact_force(world: WorldConfig, depth: float, v: np.ndarray, normal_for_friction: float | None = None) -> np.ndarray:
    """Ground force on one foot moving at ``v`` with penetration ``depth``.

    Friction magnitude uses ``normal_for_friction`` when given (the value the
    implicit step was solved with), else this call's own normal force.
    """
    F = np.zeros(3)
    if depth <= 0.0:
        return F
    F[2] = max(0.0, world.k_n * depth - world.d_n * v[2])
    fn = F[2] if normal_for_friction is None else normal_for_friction
    c = world.mu * fn
    speed = math.hypot(v[0], v[1])
    if c > 0.0 and speed > 0.0:
        F[:2] = -c * v[:2] / max(speed, world.v_reg)
    return F


def _contact_potential(world, depth, fn, v):
    """Dissipation potential phi with F = -grad phi, plus its gradient and Hessian in foot velocity."""
    phi, g, H = 0.0, np.zeros(3), np.zeros((3, 3))
    gap = world.k_n * depth / world.d_n - v[2]
    if gap > 0.0:
        phi += 0.5 * world.d_n * gap * gap
        g[2] = -world.d_n * gap
        H[2, 2] = world.d_n
    c = world.mu * fn
    if c > 0.0:
        vt = v[:2]
        speed = math.hypot(vt[0], vt[1])
        if speed < world.v_reg:
            phi += 0.5 * c * speed * speed / world.v_reg
            g[:2] = c * vt / world.v_reg
            H[:2, :2] = c / world.v_reg * np.eye(2)
        else:
            u = vt / speed
            phi += c * (speed - 0.5 * world.v_reg)
            g[:2] = c * u
            H[:2, :2] = c / speed * (np.eye(2) - np.outer(u, u))
    return phi, g, H


def step_physics(
    world: WorldConfig, model: RobotModel, state: GeneralizedState, tau: np.ndarray,
    newton_iters: int = 30, friction_passes: int = 2,
) -> tuple[GeneralizedState, np.ndarray]:
    """One physics step; returns the next state and the (4, 3) contact forces used.

    With feet below the ground the end-of-step velocity minimizes
    1/2 |nu - nu_free|_M^2 + dt sum phi_i(J_i nu), a strictly convex problem solved
    by Newton's method with backtracking. Friction magnitude is refreshed from the
    resulting normal force for ``friction_passes`` passes.
    """
    g = np.asarray(world.gravity, float)
    M = mass_matrix(model, state)
    b = S_MATRIX.T @ np.asarray(tau, float) - nonlinear_effects(model, state, g)
    nu_free = state.qdot + world.dt * np.linalg.solve(M, b)
    poses = world_poses(model, state.q)
    depth = world.ground - poses.feet[:, 2]
    legs = [i for i in range(4) if depth[i] > 0.0]
    forces = np.zeros((4, 3))
    nu = nu_free
    if legs:
        J = {i: foot_jacobian(model, state.q, i, poses) for i in legs}
        fn = {i: max(0.0, world.k_n * depth[i] - world.d_n * (J[i] @ state.qdot)[2]) for i in legs}
        for _ in range(friction_passes):
            nu = _implicit_contact_velocity(world, M, nu_free, nu, legs, J, depth, fn, newton_iters)
            fn = {i: max(0.0, world.k_n * depth[i] - world.d_n * (J[i] @ nu)[2]) for i in legs}
        for i in legs:
            forces[i] = foot_contact_force(world, depth[i], J[i] @ nu, fn[i])
    if not np.all(np.isfinite(nu)) or np.abs(nu).max() > MAX_SPEED:
        raise SimulationError(f"velocity diverged at q={state.q}")
    return advance_positions(state.q, nu, world.dt), forces


def _implicit_contact_velocity(world, M, nu_free, nu, legs, J, depth, fn, iters):
    dt = world.dt

    def evaluate(x):
        d = x - nu_free
        val = 0.5 * d @ M @ d
        grad = M @ d
        H = M.copy()
        for i in legs:
            phi, gi, Hi = _contact_potential(world, depth[i], fn[i], J[i] @ x)
            val += dt * phi
            grad += dt * J[i].T @ gi
            H += dt * J[i].T @ Hi @ J[i]
        return val, grad, H

    val, grad, H = evaluate(nu)
    for _ in range(iters):
        step = np.linalg.solve(H, grad)
        dec = grad @ step
        if dec < 1e-24:
            break
        t = 1.0
        while True:
            cand = nu - t * step
            cval, cgrad, cH = evaluate(cand)
            if cval <= val - 0.25 * t * dec or t < 1e-8:
                break
            t *= 0.5
        nu, val, grad, H = cand, cval, cgrad, cH
    return nu


# ---------------------------------------------------------------- latency


class LatencyQueue:
    """Newest command at the front; each tick latches the command at a sampled latency index."""

    def __init__(self, bins, control_period: float, rng: np.random.Generator, mode: str = "uniform") -> None:
        self.starts = np.array([a for a, _ in bins], float)
        self.probs = np.array([p for _, p in bins], float)
        self.period_ms = control_period * 1e3
        self.rng = rng
        self.mode = mode
        hi = int(math.ceil((self.starts.max() + BIN_MS) / self.period_ms)) + 1
        self.buffer: deque = deque(maxlen=hi + 1)

    def sample_index(self) -> int:
        k = int(self.rng.choice(len(self.probs), p=self.probs))
        start = self.starts[k]
        lat = start if self.mode == "start" else start + self.rng.uniform(0.0, BIN_MS)
        idx = int(round(lat / self.period_ms))
        lo = int(math.ceil(start / self.period_ms - 1e-9))
        hi = int(math.ceil((start + BIN_MS) / self.period_ms - 1e-9)) - 1
        return min(max(idx, lo), hi) if lo <= hi else idx  # stay on a tick inside the sampled bin

    def push(self, command: np.ndarray) -> tuple[np.ndarray, int]:
        self.buffer.appendleft(np.array(command, dtype=float))
        idx = self.sample_index()
        return self.buffer[min(idx, len(self.buffer) - 1)], idx


# ---------------------------------------------------------------- metrics


def joint_power(tau: np.ndarray, qdot_joints: np.ndarray) -> float:
    """Sum of absolute mechanical joint powers (W)."""
    return float(np.abs(np.asarray(tau) * np.asarray(qdot_joints)).sum())


def foot_slip(foot_velocities: np.ndarray, in_contact: np.ndarray) -> np.ndarray:
    """Tangential foot speed for legs in contact, NaN otherwise."""
    v = np.asarray(foot_velocities, float)
    s = np.hypot(v[:, 0], v[:, 1])
    return np.where(np.asarray(in_contact, bool), s, np.nan)


@dataclass
class RunMetrics:
    slip_mean: float
    slip_std: float
    orientation_error_mean: float
    orientation_error_std: float
    power_mean: float
    power_std: float
    tracking_error_mean: float
    tracking_error_std: float
    residual_mean: float
    violation_mean: float
    solve_time_mean: float
    solve_time_median: float
    ticks: int
    failed: bool
    fail_time: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _mean_std(x) -> tuple[float, float]:
    a = np.asarray(x, float)
    a = a[np.isfinite(a)]
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std())


def compute_metrics(records: dict, solve_times=(), failed: bool = False, fail_time: float = float("nan")) -> RunMetrics:
    """Aggregate per-tick records; slip only over in-contact leg-ticks."""
    slip = np.asarray(records["slip"], float)
    sm, ss = _mean_std(slip.ravel())
    om, os_ = _mean_std(np.hypot(records["err_roll"], records["err_pitch"]))
    pm, ps = _mean_std(records["power"])
    tm, ts = _mean_std(records["tracking"])
    st = np.asarray(solve_times, float)
    return RunMetrics(
        sm, ss, om, os_, pm, ps, tm, ts,
        _mean_std(records["residual"])[0],
        _mean_std(records["violation"])[0],
        float(st.mean()) if st.size else float("nan"),
        float(np.median(st)) if st.size else float("nan"),
        len(records["t"]), failed, fail_time,
    )


# ---------------------------------------------------------------- closed loop


@dataclass
class SimConfig:
    model: RobotModel
    world: WorldConfig = field(default_factory=WorldConfig)
    gait: GaitConfig = field(default_factory=GaitConfig.trot)
    limits: PlannerLimits = field(default_factory=PlannerLimits)
    gains: ControllerGains = field(default_factory=ControllerGains.from_lqr)
    weights: QPWeights = field(default_factory=QPWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)
    controller: str = "didc"
    schedule: list = field(default_factory=lambda: [(0.0, 0.0, 0.0, 0.0)])  # (t, vx, vy, wz)
    duration: float = 10.0
    seed: int = 0
    contact_source: str = "estimate"  # or "schedule"
    controller_model: RobotModel | None = None  # defaults to the plant model
    fall_height: float = 0.12
    fall_angle: float = 1.0
    fall_speed: float = 10.0  # base speed (m/s) treated as divergence
    ik_base: str = "measured"  # leg IK seen from the measured or the reference base

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.contact_source not in ("estimate", "schedule"):
            raise ValueError("contact_source is 'estimate' or 'schedule'")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.schedule = sorted((float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in self.schedule)


def command_at(schedule, t: float) -> VelocityCommand:
    row = schedule[0]
    for r in schedule:
        if r[0] <= t + 1e-12:
            row = r
        else:
            break
    return VelocityCommand(row[1], row[2], row[3])


COLUMNS = (
    ["t", "x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "cmd_vx", "cmd_vy", "vx_des", "vy_des",
     "err_roll", "err_pitch"]
    + [f"slip_{i}" for i in range(4)]
    + [f"contact_{i}" for i in range(4)]
    + [f"est_contact_{i}" for i in range(4)]
    + [f"fz_{i}" for i in range(4)]
    + ["power", "tracking", "residual", "violation", "iters"]
)


@dataclass
class SimResult:
    config: SimConfig
    rows: list
    metrics: RunMetrics
    solve_times: list
    final_state: GeneralizedState
    estimated_forces: list = field(default_factory=list, repr=False)  # (4, 3) per tick, from torques
    contact_forces: list = field(default_factory=list, repr=False)  # (4, 3) per tick, mean over the substeps

    def column(self, name: str) -> np.ndarray:
        k = COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], float)


def initial_state(model: RobotModel, world: WorldConfig, height: float = 0.31) -> GeneralizedState:
    """Standing pose at ``height`` with each foot under its hip, the whole pattern
    shifted so the foot centroid lies under the COM; feet rest on the ground."""
    s = nominal_state(model)
    q = s.q
    q[2] = height
    hips = model.hip_offsets()
    shift = np.zeros(2)
    for _ in range(4):
        for leg in range(4):
            target = np.array([hips[leg, 0] + shift[0], hips[leg, 1] + shift[1], -height])
            q[6 + 3 * leg: 9 + 3 * leg] = leg_ik(model, leg, target, q[6 + 3 * leg: 9 + 3 * leg])
        shift += center_of_mass(model, q)[:2] - foot_positions(model, q)[:, :2].mean(axis=0)
    q[2] += world.ground
    return s


def simulate(cfg: SimConfig, state: GeneralizedState | None = None) -> SimResult:
    world, model = cfg.world, cfg.model
    ctrl_model = cfg.controller_model or model
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(model, world) if state is None else state.copy()
    Tc = world.control_period
    limits = cfg.limits
    if limits.a_max is None:
        a_max = acceleration_limit(cfg.weights.f_max, cfg.weights.mu, ctrl_model.total_mass)
        limits = replace(limits, a_max=a_max)
    planner = Planner(ctrl_model, cfg.gait, limits, state, world.ground, cfg.ik_base)
    estimator = ContactEstimator(ctrl_model, Tc, ground=world.ground)
    queue = LatencyQueue(world.latency, Tc, rng, world.latency_mode)
    tau_applied = np.zeros(12)
    f_prev = None
    rows, solve_times = [], []
    f_est, f_true = [], []
    rec = {k: [] for k in ("t", "slip", "err_roll", "err_pitch", "power", "tracking", "residual", "violation")}
    failed, fail_time = False, float("nan")
    n_ticks = int(round(cfg.duration / Tc))
    forces = np.zeros((4, 3))
    for tick in range(n_ticks):
        t = tick * Tc
        cmd = command_at(cfg.schedule, t)
        plan = planner.step(t, state, cmd, Tc)
        feet = world_poses(ctrl_model, state.q).feet
        belief = estimator.update(state, tau_applied, plan.stance, feet)
        # a leg is loaded only while scheduled for stance and sensed on the ground
        flags = (belief.state & plan.stance) if cfg.contact_source == "estimate" else plan.stance
        contacts = contact_set(ctrl_model, state.q, flags)
        report = None
        if cfg.controller == "didc":
            tau, diag = didc_torque(ctrl_model, state, plan.desired, cfg.gains, contacts, cfg.weights, cfg.solver, f_prev)
            report = diag.report
            f_prev = _per_leg(diag.f_star, contacts.in_contact, f_prev)
        elif cfg.controller == "bc":
            tau, diag = balance_controller_torque(ctrl_model, state, plan.desired, cfg.gains, contacts, cfg.weights,
                                                  cfg.solver, f_prev)
            report = diag.report
            f_prev = _per_leg(diag.f_star, contacts.in_contact, f_prev)
        else:
            tau = nspidc_torque(ctrl_model, state, plan.desired, cfg.gains, contacts)
        if report is not None:
            solve_times.append(report.solve_time)
        tau_applied, _ = queue.push(tau)
        power = 0.0
        f_mean = np.zeros((4, 3))
        try:
            for _ in range(world.substeps):
                state, forces = step_physics(world, model, state, tau_applied)
                power += joint_power(tau_applied, state.qdot[6:]) / world.substeps
                f_mean += forces / world.substeps
        except SimulationError:
            failed, fail_time = True, t + Tc
            break
        if _fallen(cfg, state):
            # the tick that ends the run is not recorded: its state is already off the rails
            failed, fail_time = True, t + Tc
            break
        f_est.append(belief.forces)
        f_true.append(f_mean)
        row, slip = _record(model, state, plan.desired, cmd, forces, belief.state, power, report, t + Tc)
        rows.append(row)
        rec["t"].append(t + Tc)
        rec["slip"].append(slip)
        rec["err_roll"].append(row[13])
        rec["err_pitch"].append(row[14])
        rec["power"].append(power)
        rec["tracking"].append(row[-4])
        rec["residual"].append(row[-3])
        rec["violation"].append(row[-2])
    metrics = compute_metrics(rec, solve_times, failed, fail_time)
    return SimResult(cfg, rows, metrics, solve_times, state, f_est, f_true)


def _fallen(cfg: SimConfig, state: GeneralizedState) -> bool:
    z = state.q[2] - cfg.world.ground
    tilted = abs(state.q[3]) > cfg.fall_angle or abs(state.q[4]) > cfg.fall_angle
    return z < cfg.fall_height or tilted or np.linalg.norm(state.qdot[:3]) > cfg.fall_speed


def _per_leg(f_star: np.ndarray, in_contact, previous) -> np.ndarray:
    out = np.zeros((4, 3)) if previous is None else previous.copy()
    legs = [i for i, c in enumerate(in_contact) if c]
    out[[i for i in range(4) if i not in legs]] = 0.0
    if legs:
        out[legs] = f_star.reshape(-1, 3)
    return out


def _record(model, state, desired: DesiredMotion, cmd, forces, est_contact, power, report, t):
    poses = world_poses(model, state.q)
    vel = np.array([foot_jacobian(model, state.q, i, poses) @ state.qdot for i in range(4)])
    in_contact = forces[:, 2] > 0.0
    slip = foot_slip(vel, in_contact)
    e = orientation_error(desired.q[3:6], state.q[3:6])
    tracking = float(np.hypot(*(state.qdot[:2] - desired.qdot[:2])))
    residual = report.residual if report is not None else float("nan")
    violation = report.violation if report is not None else float("nan")
    iters = report.iterations if report is not None else 0
    row = (
        [t, *state.q[:6], state.qdot[0], state.qdot[1], cmd.vx, cmd.vy, desired.qdot[0], desired.qdot[1], e[0], e[1]]
        + list(slip) + [int(c) for c in in_contact] + [int(c) for c in est_contact] + list(forces[:, 2])
        + [power, tracking, residual, violation, iters]
    )
    return row, slip


# ---------------------------------------------------------------- output


def scenario_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def metrics_csv(result: SimResult, scenario_digest: str) -> str:
    """Per-tick records as CSV, headed by the scenario hash and seed. Solve times are left out
    so that the file is reproducible byte for byte."""
    buf = io.StringIO()
    buf.write(f"# scenario={scenario_digest} seed={result.config.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in result.rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()

