"""Joint-torque controllers: DIDC and the two baselines (null-space projection ID, balance controller).

All three consume the same desired motion and gains. Sign convention of the plant:

    M qddot + eta = S^T tau + J_c^T F_c

with F_c the ground reaction on the stance feet. Splitting the full-actuation force
tau_f = M qddot_cmd + eta into base rows tau_b and joint rows tau_j, the base rows
must be produced by contact forces (J_ab^T F_c = tau_b) and the stance-leg joint
rows by tau = tau_j - J_aa^T F_c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rbd import (
    NV,
    S_MATRIX,
    ContactSet,
    GeneralizedState,
    RobotModel,
    center_of_mass,
    contact_jacobian,
    inverse_dynamics,
    mass_matrix,
    nonlinear_effects,
    orientation_error,
)
from .rbd.rotations import euler_to_rot, skew
from .solver import DEFAULT_S1, DEFAULT_V, DEFAULT_W, SolveReport, build_qp, solve_qp

PINV_RCOND = 1e-8  # singular values below rcond * sigma_max are treated as zero
BASE_XY_KD = 10.4


class ControllerError(RuntimeError):
    pass


# ---------------------------------------------------------------- gains


def lqr_gains(q1: float, q2: float, r: float) -> tuple[float, float]:
    """Infinite-horizon LQR for a double integrator with cost diag(q1, q2) and input weight r."""
    if q1 < 0 or q2 < 0 or r <= 0:
        raise ValueError("need q1, q2 >= 0 and r > 0")
    kp = np.sqrt(q1 / r)
    return float(kp), float(np.sqrt(q2 / r + 2.0 * kp))


def riccati_residual(q1: float, q2: float, r: float, kp: float, kd: float) -> float:
    """max |A^T P + P A - P B B^T P / r + Q| for the P implied by gains (kp, kd)."""
    p12, p22 = r * kp, r * kd
    P = np.array([[p12 * p22 / r, p12], [p12, p22]])
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    res = A.T @ P + P @ A - P @ B @ B.T @ P / r + np.diag([q1, q2])
    return float(np.abs(res).max())


@dataclass
class ControllerGains:
    """Diagonal stiffness and damping on the 18 generalized coordinates (1/s^2, 1/s)."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self) -> None:
        self.kp = np.broadcast_to(np.asarray(self.kp, float), (NV,)).copy()
        self.kd = np.broadcast_to(np.asarray(self.kd, float), (NV,)).copy()
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ValueError("gains must be non-negative")

    @classmethod
    def from_lqr(cls, q1: float = 100.0, q2: float = 1.0, r: float = 1e-3, base_xy_kd: float = BASE_XY_KD):
        """Same LQR gains on every coordinate; base x, y use pure damping."""
        kp, kd = lqr_gains(q1, q2, r)
        g = cls(np.full(NV, kp), np.full(NV, kd))
        g.kp[:2] = 0.0
        g.kd[:2] = base_xy_kd
        return g

    def scaled(self, factor: float) -> "ControllerGains":
        """Softer (factor < 1) or stiffer gains; damping scaled by sqrt(factor) to keep the damping ratio."""
        return ControllerGains(self.kp * factor, self.kd * np.sqrt(factor))


@dataclass
class QPWeights:
    S1: tuple = DEFAULT_S1
    W: float = DEFAULT_W
    V: float = DEFAULT_V
    mu: float = 0.5
    f_min: float = 0.0
    f_max: float = 500.0


@dataclass
class SolverConfig:
    method: str = "gpgd"
    max_iters: int = 100
    tol: float = 1e-2


# ---------------------------------------------------------------- shared pieces


@dataclass
class DesiredMotion:
    """Planner output: positions (Euler angles for the base), generalized velocities (world omega) and accelerations."""

    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray

    @classmethod
    def hold(cls, state: GeneralizedState) -> "DesiredMotion":
        return cls(state.q.copy(), np.zeros(NV), np.zeros(NV))


@dataclass
class ControllerDiagnostics:
    tau_f: np.ndarray
    tau_b: np.ndarray
    tau_j: np.ndarray
    tau_1: np.ndarray
    f_star: np.ndarray
    achieved_wrench: np.ndarray
    model_error: np.ndarray | None = None
    report: SolveReport | None = field(default=None, repr=False)


def commanded_acceleration(state: GeneralizedState, desired: DesiredMotion, gains: ControllerGains) -> np.ndarray:
    """qddot_des + Kp (q_des - q) + Kd (qdot_des - qdot), orientation rows on SO(3)."""
    e = desired.q - state.q
    e[3:6] = orientation_error(desired.q[3:6], state.q[3:6])
    return desired.qddot + gains.kp * e + gains.kd * (desired.qdot - state.qdot)


def full_generalized_force(model: RobotModel, state: GeneralizedState, qddot_cmd: np.ndarray) -> np.ndarray:
    """tau_f = M qddot_cmd + eta: the force a fully actuated robot would need."""
    return inverse_dynamics(model, state, qddot_cmd)


def model_mismatch(
    controller_model: RobotModel, plant_model: RobotModel, state: GeneralizedState, qddot_cmd: np.ndarray
) -> np.ndarray:
    """epsilon = (M_hat - M) qddot_cmd + (eta_hat - eta)."""
    return full_generalized_force(controller_model, state, qddot_cmd) - full_generalized_force(
        plant_model, state, qddot_cmd
    )


def pinv(A: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(A, rcond=PINV_RCOND)


def base_to_joint_map(J_ab: np.ndarray, J_aa: np.ndarray) -> np.ndarray:
    """J_{a,b} = -J_aa^T (J_ab^T)^+, the 12 x 6 map from base wrench to stance torques."""
    return -J_aa.T @ pinv(J_ab.T)


def null_space_projector(J: np.ndarray, cond_limit: float = 1e4) -> tuple[np.ndarray, np.ndarray]:
    """(N, J^+) with N = I - J (J^T J)^-1 J^T.

    The normal equations square the condition number, so past ``cond_limit`` on
    J^T J the SVD pseudo-inverse is used instead.
    """
    G = J.T @ J
    if J.shape[1] and np.linalg.cond(G) < cond_limit:
        Jp = np.linalg.solve(G, J.T)
    else:
        Jp = pinv(J)
    return np.eye(J.shape[0]) - J @ Jp, Jp


def _stance_forces(f_prev: np.ndarray | None, contacts: ContactSet) -> np.ndarray | None:
    if f_prev is None:
        return None
    f_prev = np.asarray(f_prev, float)
    if f_prev.shape == (4, 3):
        return f_prev[contacts.legs].reshape(-1)
    return f_prev.reshape(-1)


def _solve_distribution(J_ab, tau_b, weights: QPWeights, solver: SolverConfig, f_prev):
    n = J_ab.shape[0]
    if f_prev is None:
        f_prev = np.zeros(n)
        f_prev[2::3] = tau_b[2] / max(n // 3, 1)
    qp = build_qp(J_ab, tau_b, weights.S1, weights.W, weights.V, f_prev, weights.mu, weights.f_min, weights.f_max)
    return solve_qp(qp, solver.method, qp.f_prev, solver.max_iters, solver.tol)


# ---------------------------------------------------------------- DIDC


def didc_torque(
    model: RobotModel,
    state: GeneralizedState,
    desired: DesiredMotion,
    gains: ControllerGains,
    contacts: ContactSet,
    weights: QPWeights | None = None,
    solver: SolverConfig | None = None,
    f_prev: np.ndarray | None = None,
    plant_model: RobotModel | None = None,
) -> tuple[np.ndarray, ControllerDiagnostics]:
    """tau = -J_aa^T f* + N_{a,b} tau_j.

    ``f_prev`` is either the previous per-leg (4, 3) force array or the stacked
    stance forces; swing legs are left out of J_ab and J_aa entirely.
    """
    weights = weights or QPWeights()
    solver = solver or SolverConfig()
    qddot_cmd = commanded_acceleration(state, desired, gains)
    tau_f = full_generalized_force(model, state, qddot_cmd)
    tau_b, tau_j = tau_f[:6], tau_f[6:]
    eps = None if plant_model is None else model_mismatch(model, plant_model, state, qddot_cmd)
    if contacts.n_c == 0:
        return tau_j.copy(), ControllerDiagnostics(tau_f, tau_b, tau_j, np.zeros(12), np.zeros(0), np.zeros(6), eps)
    _, J_ab, J_aa = contact_jacobian(model, state, contacts)
    report = _solve_distribution(J_ab, tau_b, weights, solver, _stance_forces(f_prev, contacts))
    f = report.f_star
    tau_1 = -J_aa.T @ f
    Jb = base_to_joint_map(J_ab, J_aa)
    N, Jb_pinv = null_space_projector(Jb)
    tau = tau_1 + N @ tau_j
    diag = ControllerDiagnostics(tau_f, tau_b, tau_j, tau_1, f, Jb_pinv @ tau, eps, report)
    return tau, diag


# ---------------------------------------------------------------- NSPIDC


def constraint_null_space(M: np.ndarray, Jc: np.ndarray) -> np.ndarray:
    """Dynamically consistent N_c = I - M^-1 J_c^T (J_c M^-1 J_c^T)^-1 J_c."""
    Minv_JT = np.linalg.solve(M, Jc.T)
    Lam_inv = Jc @ Minv_JT
    try:
        return np.eye(M.shape[0]) - Minv_JT @ np.linalg.solve(Lam_inv, Jc)
    except np.linalg.LinAlgError:
        return np.eye(M.shape[0]) - Minv_JT @ pinv(Lam_inv) @ Jc


def nspidc_torque(
    model: RobotModel,
    state: GeneralizedState,
    desired: DesiredMotion,
    gains: ControllerGains,
    contacts: ContactSet,
) -> np.ndarray:
    """tau = (N_c^T S^T)^+ N_c^T (M qddot_cmd + eta); contact forces are never constrained."""
    qddot_cmd = commanded_acceleration(state, desired, gains)
    tau_f = full_generalized_force(model, state, qddot_cmd)
    if contacts.n_c == 0:
        return tau_f[6:].copy()
    M = mass_matrix(model, state)
    Jc, _, _ = contact_jacobian(model, state, contacts)
    NcT = constraint_null_space(M, Jc).T
    return pinv(NcT @ S_MATRIX.T) @ NcT @ tau_f


# ---------------------------------------------------------------- balance controller


def srbd_wrench(
    model: RobotModel, state: GeneralizedState, desired: DesiredMotion, gains: ControllerGains,
    gravity: np.ndarray | None = None,
) -> np.ndarray:
    """[force; moment about the COM] from base PD plus weight support, lumped-body inertia only."""
    g = np.array([0.0, 0.0, -9.81]) if gravity is None else gravity
    a = commanded_acceleration(state, desired, gains)
    R = euler_to_rot(state.q[3:6])
    I_world = R @ _lumped_inertia(model) @ R.T
    return np.concatenate([model.total_mass * (a[:3] - g), I_world @ a[3:6]])


def _lumped_inertia(model: RobotModel) -> np.ndarray:
    """Base rotational inertia about its COM, enlarged by the leg masses placed at the hips."""
    base = model.bodies[0]
    I = base.inertia.copy()
    for h, m in zip(model.hip_offsets(), model.leg_mass.sum(axis=1)):
        d = h - base.com
        I += m * (d @ d * np.eye(3) - np.outer(d, d))
    return I


def srbd_jacobian(feet: np.ndarray, com: np.ndarray) -> np.ndarray:
    """(3 n_c, 6) map with J^T F = [sum F; sum (p - c) x F]."""
    J = np.zeros((3 * len(feet), 6))
    for i, p in enumerate(feet):
        J[3 * i: 3 * i + 3, :3] = np.eye(3)
        J[3 * i: 3 * i + 3, 3:] = skew(p - com).T
    return J


def leg_gravity_torques(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    """Joint rows of the static gravity force: each joint only carries the links beyond it."""
    return nonlinear_effects(model, GeneralizedState(state.q, np.zeros(NV)))[6:]


def balance_controller_torque(
    model: RobotModel,
    state: GeneralizedState,
    desired: DesiredMotion,
    gains: ControllerGains,
    contacts: ContactSet,
    weights: QPWeights | None = None,
    solver: SolverConfig | None = None,
    f_prev: np.ndarray | None = None,
) -> tuple[np.ndarray, ControllerDiagnostics]:
    """Lumped-body force distribution on stance legs plus independently added swing-leg PD."""
    weights = weights or QPWeights()
    solver = solver or SolverConfig()
    wrench = srbd_wrench(model, state, desired, gains)
    tau = np.zeros(12)
    f = np.zeros(0)
    report = None
    if contacts.n_c:
        _, _, J_aa = contact_jacobian(model, state, contacts)
        J = srbd_jacobian(contacts.positions, center_of_mass(model, state.q))
        report = _solve_distribution(J, wrench, weights, solver, _stance_forces(f_prev, contacts))
        f = report.f_star
        tau = -J_aa.T @ f
    # swing legs: joint-space computed torque with the leg's own inertia, added directly
    swing = [leg for leg in range(4) if not contacts.in_contact[leg]]
    if swing:
        M = mass_matrix(model, state)
        acc = commanded_acceleration(state, desired, gains)[6:]
        g = leg_gravity_torques(model, state)
        for leg in swing:
            s = slice(3 * leg, 3 * leg + 3)
            js = slice(6 + 3 * leg, 9 + 3 * leg)
            tau[s] += M[js, js] @ acc[s] + g[s]
    diag = ControllerDiagnostics(np.concatenate([wrench, np.zeros(12)]), wrench, np.zeros(12), tau.copy(), f,
                                 np.zeros(6) if not contacts.n_c else J.T @ f, None, report)
    return tau, diag
