"""Reference generation for trotting: base and yaw references, gait clock, footholds, swing arcs.

Base references are shaped by a saturated first-order law and integrated
semi-implicitly; footholds follow the Raibert rule and are pulled back inside the
reachable disc, lowering the base when that happens and raising it otherwise.
Joint references come from leg inverse kinematics of the desired foot positions,
seen from the measured base pose by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .controller import DesiredMotion, QPWeights
from .rbd import NV, GeneralizedState, RobotModel, center_of_mass, foot_positions
from .rbd.rotations import axis_angle, euler_to_rot, rot_z


class PlannerError(ValueError):
    pass


# ---------------------------------------------------------------- gait clock


@dataclass
class GaitConfig:
    """Period (s), per-leg duty factor and phase offset, swing apex height (m)."""

    period: float = 0.5
    duty: np.ndarray = field(default_factory=lambda: np.full(4, 0.5))
    offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.5, 0.5, 0.0]))
    step_height: float = 0.06

    def __post_init__(self) -> None:
        self.duty = np.broadcast_to(np.asarray(self.duty, float), (4,)).copy()
        self.offset = np.broadcast_to(np.asarray(self.offset, float), (4,)).copy()
        if self.period <= 0:
            raise PlannerError("gait period must be positive")
        if np.any(self.duty <= 0) or np.any(self.duty > 1):
            raise PlannerError("duty factors must lie in (0, 1]")
        if np.any(self.offset < 0) or np.any(self.offset >= 1):
            raise PlannerError("phase offsets must lie in [0, 1)")
        if self.step_height < 0:
            raise PlannerError("step height must be non-negative")

    @classmethod
    def trot(cls, period: float = 0.5, duty: float = 0.5, step_height: float = 0.06) -> "GaitConfig":
        """Diagonal pairs (FL, RR) and (FR, RL) half a period apart."""
        return cls(period, np.full(4, duty), np.array([0.0, 0.5, 0.5, 0.0]), step_height)

    @classmethod
    def stand(cls) -> "GaitConfig":
        return cls(1.0, np.ones(4), np.zeros(4), 0.0)


def gait_phase(t: float, gait: GaitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-leg normalized phase in [0, 1) and desired stance flags (phase < duty)."""
    phase = np.mod(t / gait.period + gait.offset, 1.0)
    phase = np.mod(np.round(phase, 12), 1.0)  # keep complementary legs consistent at switch instants
    return phase, phase < gait.duty


def swing_progress(phase: np.ndarray, gait: GaitConfig) -> np.ndarray:
    """Fraction of the swing elapsed per leg; 0 for stance legs."""
    out = np.zeros(4)
    sw = (phase >= gait.duty) & (gait.duty < 1.0)
    out[sw] = (phase[sw] - gait.duty[sw]) / (1.0 - gait.duty[sw])
    return out


# ---------------------------------------------------------------- base references


@dataclass
class VelocityCommand:
    vx: float = 0.0
    vy: float = 0.0
    wz: float = 0.0


@dataclass
class PlannerLimits:
    a_max: float | None = None  # body-frame per-axis bound (m/s^2); None derives mu F_max / m
    v_max: float = 2.0  # commanded planar speed bound per axis (m/s)
    omega_max: float = 1.5  # yaw rate (rad/s)
    alpha_max: float = 4.0  # yaw acceleration (rad/s^2)
    z_min: float = 0.22
    z_max: float = 0.31
    rate_down: float = 0.2  # height decrement rate while a step is clamped (m/s)
    rate_up: float = 0.05  # height recovery rate (m/s)
    beta: float = 0.9
    k_b: float = 2.0
    k_theta: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0 + 1e-12:
            raise PlannerError("beta must lie in (0, 1]")
        if not 0.0 < self.z_min <= self.z_max:
            raise PlannerError("need 0 < z_min <= z_max")
        if self.a_max is not None and self.a_max <= 0:
            raise PlannerError("a_max must be positive")
        if min(self.omega_max, self.alpha_max, self.k_b, self.k_theta) <= 0:
            raise PlannerError("rate limits and shaping gains must be positive")


def acceleration_limit(f_max_z: float, mu: float, total_mass: float) -> float:
    """Largest horizontal acceleration friction can support: mu F_max / m."""
    return mu * f_max_z / total_mass


@dataclass
class BaseReference:
    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    yaw_rate: float = 0.0
    yaw_acc: float = 0.0


def update_base_reference(
    ref: BaseReference, cmd: VelocityCommand, R: np.ndarray, dt: float, k_b: float, a_max: float,
    v_max: float = np.inf,
) -> BaseReference:
    """Body-frame first-order velocity shaping with clamped acceleration, integrated in the world frame.

    ``R`` is the body-to-world rotation; only its planar block is used.
    """
    if dt <= 0:
        raise PlannerError("dt must be positive")
    Rp = np.asarray(R, float)[:2, :2]
    v_cmd = np.clip([cmd.vx, cmd.vy], -v_max, v_max)
    v_body = Rp.T @ ref.vel[:2]
    a_body = np.clip(k_b * (v_cmd - v_body), -a_max, a_max)
    ref.acc[:2] = Rp @ a_body
    ref.vel[:2] = ref.vel[:2] + ref.acc[:2] * dt
    ref.pos[:2] = ref.pos[:2] + ref.vel[:2] * dt
    return ref


def update_yaw_reference(
    ref: BaseReference, wz_cmd: float, dt: float, k_theta: float, alpha_max: float, omega_max: float
) -> BaseReference:
    if dt <= 0:
        raise PlannerError("dt must be positive")
    ref.yaw_acc = float(np.clip(k_theta * (wz_cmd - ref.yaw_rate), -alpha_max, alpha_max))
    ref.yaw_rate = float(np.clip(ref.yaw_rate + ref.yaw_acc * dt, -omega_max, omega_max))
    ref.yaw = ref.yaw + ref.yaw_rate * dt
    return ref


# ---------------------------------------------------------------- footholds


def _hips(model: RobotModel) -> np.ndarray:
    cached = getattr(model, "_hip_cache", None)
    if cached is None:
        cached = model.hip_offsets()
        object.__setattr__(model, "_hip_cache", cached)
    return cached


def hip_kinematics(model: RobotModel, state: GeneralizedState) -> tuple[np.ndarray, np.ndarray]:
    """World hip positions r_b + R r_h/b and velocities v_b + omega x (R r_h/b), both (4, 3)."""
    R = euler_to_rot(state.q[3:6])
    arm = _hips(model) @ R.T
    return state.q[:3] + arm, state.qdot[:3] + np.cross(state.qdot[3:6], arm)


def com_shift(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Planar offset of the whole-body COM from the base origin, in the yaw frame.

    Footholds are laid out around the hips shifted by this amount so that the
    support polygon (and each trot diagonal) stays centred under the COM.
    """
    rel = center_of_mass(model, q) - q[:3]
    return (rot_z(q[5]).T @ rel)[:2]


def raibert_offset(hip_velocity: np.ndarray, duty: float, period: float) -> np.ndarray:
    """d = 1/2 v_hip * stance duration, planar."""
    return 0.5 * np.asarray(hip_velocity, float)[..., :2] * duty * period


def foothold_target(
    hip_position: np.ndarray, hip_velocity: np.ndarray, gait: GaitConfig, leg: int, ground: float = 0.0
) -> np.ndarray:
    d = raibert_offset(hip_velocity, gait.duty[leg], gait.period)
    return np.array([hip_position[0] + d[0], hip_position[1] + d[1], ground])


def max_step_length(hip_height: float, leg_extension: float, beta: float) -> float:
    """Radius of the reachable disc on the ground: sqrt(beta l_e^2 - h^2)."""
    rad = beta * leg_extension**2 - hip_height**2
    if rad < 0.0:
        raise PlannerError(
            f"hip height {hip_height:.3f} m is unreachable with beta={beta} and leg extension {leg_extension} m"
        )
    return float(np.sqrt(rad))


def v_max(beta: float, leg_extension: float, hip_height: float, duty: float, period: float) -> float:
    """Fastest speed whose Raibert step stays inside the reachable disc."""
    return 2.0 * max_step_length(hip_height, leg_extension, beta) / (duty * period)


def adapt_step_and_height(
    offsets: np.ndarray, d_max: float, z_des: float, dt: float, limits: PlannerLimits
) -> tuple[np.ndarray, float, np.ndarray]:
    """Clamp each planar step to d_max keeping its direction; lower the base if any was
    clamped, raise it otherwise, and keep the height inside [z_min, z_max].

    Returns (clamped offsets, new height reference, per-leg clamp flags).
    """
    d = np.array(offsets, dtype=float)
    n = np.linalg.norm(d, axis=-1)
    flags = n > d_max
    d[flags] *= (d_max / n[flags])[:, None]
    if flags.any():
        z_des = z_des - limits.rate_down * dt
    else:
        z_des = z_des + limits.rate_up * dt
    return d, float(np.clip(z_des, limits.z_min, limits.z_max)), flags


def swing_trajectory(
    phi: float, start: np.ndarray, target: np.ndarray, height: float, duration: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-cosine blend from start to target plus a sin^2 arch of apex ``height``.

    Returns position, velocity and acceleration; derivatives are with respect to
    time for a swing lasting ``duration`` seconds. Vertical velocity is zero at both ends.
    """
    start = np.asarray(start, float)
    target = np.asarray(target, float)
    phi = float(np.clip(phi, 0.0, 1.0))
    w = np.pi / duration
    s, c = np.sin(np.pi * phi), np.cos(np.pi * phi)
    delta = target - start
    pos = start + delta * 0.5 * (1.0 - c)
    vel = delta * 0.5 * w * s
    acc = delta * 0.5 * w * w * c
    s2, c2 = np.sin(2 * np.pi * phi), np.cos(2 * np.pi * phi)
    pos[2] += height * s * s
    vel[2] += height * w * s2
    acc[2] += 2.0 * height * w * w * c2
    return pos, vel, acc


# ---------------------------------------------------------------- leg kinematics


def leg_fk(model: RobotModel, leg: int, q_leg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Foot position in the base frame and its 3x3 Jacobian w.r.t. the leg's joints."""
    R = np.eye(3)
    p = np.zeros(3)
    axes, origins = [], []
    for k in range(3):
        p = p + R @ model.leg_origin[leg, k]
        R = R @ model.leg_rot_tree[leg, k]
        axes.append(R @ model.leg_axis[leg, k])
        origins.append(p)
        R = R @ axis_angle(model.leg_axis[leg, k], q_leg[k])
    foot = p + R @ model.foot_offset[leg]
    a, r = np.array(axes), foot - np.array(origins)
    J = (a[:, [1, 2, 0]] * r[:, [2, 0, 1]] - a[:, [2, 0, 1]] * r[:, [1, 2, 0]]).T
    return foot, J


def leg_ik(
    model: RobotModel, leg: int, target: np.ndarray, q_guess: np.ndarray, iters: int = 30, tol: float = 1e-10
) -> np.ndarray:
    """Newton iterations from ``q_guess`` (which fixes the knee branch); least squares near singularities."""
    q = np.array(q_guess, dtype=float)
    for _ in range(iters):
        p, J = leg_fk(model, leg, q)
        e = target - p
        if np.abs(e).max() < tol:
            break
        q = q + np.linalg.lstsq(J, e, rcond=1e-8)[0]
    return q


# ---------------------------------------------------------------- planner


@dataclass
class PlanOutput:
    desired: DesiredMotion
    stance: np.ndarray  # desired contact flags
    phase: np.ndarray
    feet_des: np.ndarray  # (4, 3) world
    footholds: np.ndarray  # (4, 3) current landing targets
    step_clamped: np.ndarray


class Planner:
    """Stateful trot planner advanced once per control tick."""

    def __init__(
        self,
        model: RobotModel,
        gait: GaitConfig,
        limits: PlannerLimits,
        state: GeneralizedState,
        ground: float = 0.0,
        ik_base: str = "measured",
    ) -> None:
        if ik_base not in ("measured", "desired"):
            raise PlannerError("ik_base is 'measured' or 'desired'")
        self.ik_base = ik_base
        self.model = model
        self.gait = gait
        if limits.a_max is None:
            w = QPWeights()
            limits = replace(limits, a_max=acceleration_limit(w.f_max, w.mu, model.total_mass))
        self.limits = limits
        self.ground = ground
        self.ref = BaseReference(pos=state.q[:3].copy(), yaw=float(state.q[5]))
        self.height = float(np.clip(state.q[2] - ground, limits.z_min, limits.z_max))
        feet = foot_positions(model, state.q)
        self.planted = feet.copy()
        self.planted[:, 2] = ground
        self.liftoff = feet.copy()
        self.targets = self.planted.copy()
        self.q_joint = state.q[6:].copy()
        self.com_shift = com_shift(model, state.q)
        _, self.prev_stance = gait_phase(0.0, gait)
        self.t = 0.0

    def step(self, t: float, state: GeneralizedState, cmd: VelocityCommand, dt: float) -> PlanOutput:
        gait, lim = self.gait, self.limits
        phase, stance = gait_phase(t, gait)
        prog = swing_progress(phase, gait)
        feet = foot_positions(self.model, state.q)

        update_yaw_reference(self.ref, cmd.wz, dt, lim.k_theta, lim.alpha_max, lim.omega_max)
        update_base_reference(self.ref, cmd, rot_z(state.q[5]), dt, lim.k_b, lim.a_max, lim.v_max)

        for leg in range(4):
            if self.prev_stance[leg] and not stance[leg]:
                self.liftoff[leg] = feet[leg]
            elif stance[leg] and not self.prev_stance[leg]:
                self.planted[leg] = [feet[leg, 0], feet[leg, 1], self.ground]
        self.prev_stance = stance

        # Raibert steps about the hip where it will be at touchdown, then reachability clamp
        hip_p, hip_v = hip_kinematics(self.model, state)
        yaw_R = rot_z(state.q[5])[:2, :2]
        remaining = (1.0 - prog) * (1.0 - gait.duty) * gait.period
        d = np.array([raibert_offset(hip_v[i], gait.duty[i], gait.period) for i in range(4)])
        d_max = max_step_length(self.height, self.model.max_leg_extension, lim.beta)
        d, self.height, clamped = adapt_step_and_height(d, d_max, self.height, dt, lim)
        for leg in range(4):
            if not stance[leg] and prog[leg] < 0.5:
                land = hip_p[leg, :2] + yaw_R @ self.com_shift + self.ref.vel[:2] * remaining[leg] + d[leg]
                self.targets[leg] = [land[0], land[1], self.ground]

        feet_des = self.planted.copy()
        feet_vel = np.zeros((4, 3))
        feet_acc = np.zeros((4, 3))
        for leg in range(4):
            if not stance[leg]:
                dur = (1.0 - gait.duty[leg]) * gait.period
                feet_des[leg], feet_vel[leg], feet_acc[leg] = swing_trajectory(
                    prog[leg], self.liftoff[leg], self.targets[leg], gait.step_height, dur
                )

        desired = self._desired_motion(feet_des, feet_vel, feet_acc, state)
        self.t = t
        return PlanOutput(desired, stance, phase, feet_des, self.targets.copy(), clamped)

    def _desired_motion(self, feet_des, feet_vel, feet_acc, state=None) -> DesiredMotion:
        """Base reference plus leg joint references that put each foot on its world target,
        seen from the measured base (default) or from the base reference."""
        ref = self.ref
        q = np.zeros(NV)
        qd = np.zeros(NV)
        qdd = np.zeros(NV)
        q[:2] = ref.pos[:2]
        q[2] = self.height + self.ground
        q[5] = ref.yaw
        qd[:2] = ref.vel[:2]
        qd[5] = ref.yaw_rate
        qdd[:2] = ref.acc[:2]
        qdd[5] = ref.yaw_acc
        if self.ik_base == "measured" and state is not None:
            base, vb, w = state.q[:3], state.qdot[:3], state.qdot[3:6]
            R = euler_to_rot(state.q[3:6])
            ab = np.zeros(3)
        else:
            base, vb, w, ab = q[:3], qd[:3], qd[3:6], qdd[:3]
            R = euler_to_rot(q[3:6])
        for leg in range(4):
            rel = feet_des[leg] - base
            target = R.T @ rel
            ql = leg_ik(self.model, leg, target, self.q_joint[3 * leg: 3 * leg + 3])
            _, J = leg_fk(self.model, leg, ql)
            v_rel = R.T @ (feet_vel[leg] - vb - np.cross(w, rel))
            a_rel = R.T @ (feet_acc[leg] - ab)
            s = slice(6 + 3 * leg, 9 + 3 * leg)
            q[s] = ql
            qd[s] = np.linalg.solve(J, v_rel)
            qdd[s] = np.linalg.solve(J, a_rel)
            self.q_joint[3 * leg: 3 * leg + 3] = ql
        return DesiredMotion(q, qd, qdd)
