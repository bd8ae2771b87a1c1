"""Numerical self-checks of the dynamics model.

Each check returns a residual so callers (tests, the CLI) decide what tolerance
to hold it to. Finite differences move the base along the generalized velocity
directions, i.e. rotations are perturbed by ``exp(h w) R``, matching the
world-frame angular velocity used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    GRAVITY,
    advance_positions,
    foot_bias_accelerations,
    foot_jacobian,
    foot_positions,
    forward_dynamics,
    integrate,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
    nominal_state,
    nonlinear_effects,
    potential_energy,
    solve_acceleration,
)
from .model import NV, GeneralizedState, RobotModel

ZERO_G = np.zeros(3)


def random_state(rng: np.random.Generator, vel_scale: float = 1.0) -> GeneralizedState:
    """Broad random configuration: roll/pitch within 0.6 rad, any yaw, joints within 1.2 rad."""
    q = np.zeros(NV)
    q[:3] = rng.uniform(-0.5, 0.5, 3) + [0.0, 0.0, 0.3]
    q[3:5] = rng.uniform(-0.6, 0.6, 2)
    q[5] = rng.uniform(-np.pi, np.pi)
    q[6:] = rng.uniform(-1.2, 1.2, 12)
    return GeneralizedState(q, rng.normal(scale=vel_scale, size=NV))


def _shift(q: np.ndarray, direction: np.ndarray, h: float) -> np.ndarray:
    return advance_positions(q, direction, h).q


def symmetry_residual(model: RobotModel, state: GeneralizedState) -> float:
    M = mass_matrix(model, state)
    return float(np.abs(M - M.T).max())


def min_eigenvalue(model: RobotModel, state: GeneralizedState) -> float:
    M = mass_matrix(model, state)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def crba_rnea_residual(model: RobotModel, state: GeneralizedState) -> float:
    """max_i ||M e_i - (ID(q, 0, e_i) - ID(q, 0, 0))|| with gravity off."""
    M = mass_matrix(model, state)
    still = GeneralizedState(state.q, np.zeros(NV))
    base = inverse_dynamics(model, still, np.zeros(NV), ZERO_G)
    worst = 0.0
    for i in range(NV):
        e = np.zeros(NV)
        e[i] = 1.0
        col = inverse_dynamics(model, still, e, ZERO_G) - base
        worst = max(worst, float(np.linalg.norm(M[:, i] - col)))
    return worst


def jacobian_fd_residual(model: RobotModel, q: np.ndarray, h: float = 1e-6) -> float:
    """Worst relative Frobenius error of the four foot Jacobians vs central differences."""
    worst = 0.0
    for leg in range(4):
        J = foot_jacobian(model, q, leg)
        Jfd = np.zeros_like(J)
        for i in range(NV):
            e = np.zeros(NV)
            e[i] = 1.0
            pp = foot_positions(model, _shift(q, e, h))[leg]
            pm = foot_positions(model, _shift(q, e, -h))[leg]
            Jfd[:, i] = (pp - pm) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(J - Jfd) / max(np.linalg.norm(J), 1.0)))
    return worst


def gravity_fd_residual(model: RobotModel, q: np.ndarray, h: float = 1e-5) -> float:
    """||eta(q, 0) - dV/dq|| with the potential gradient taken by central differences."""
    eta = nonlinear_effects(model, GeneralizedState(q, np.zeros(NV)), GRAVITY)
    grad = np.zeros(NV)
    for i in range(NV):
        e = np.zeros(NV)
        e[i] = 1.0
        grad[i] = (potential_energy(model, _shift(q, e, h)) - potential_energy(model, _shift(q, e, -h))) / (2.0 * h)
    return float(np.abs(eta - grad).max())


def energy_identity_residual(model: RobotModel, state: GeneralizedState, h: float = 1e-6) -> float:
    """|nu^T (Mdot - 2C) nu| with Mdot from central differences along nu."""
    nu = state.qdot
    Mp = mass_matrix(model, GeneralizedState(_shift(state.q, nu, h), nu))
    Mm = mass_matrix(model, GeneralizedState(_shift(state.q, nu, -h), nu))
    Mdot = (Mp - Mm) / (2.0 * h)
    Cnu = nonlinear_effects(model, state, ZERO_G)
    return float(abs(nu @ Mdot @ nu - 2.0 * nu @ Cnu))


def bias_acceleration_fd_residual(model: RobotModel, state: GeneralizedState, h: float = 1e-6) -> float:
    """||Jdot qdot - d/dt(J) qdot||, the latter by central differences along the motion."""
    nu = state.qdot
    qp, qm = _shift(state.q, nu, h), _shift(state.q, nu, -h)
    bias = foot_bias_accelerations(model, state)
    worst = 0.0
    for leg in range(4):
        fd = (foot_jacobian(model, qp, leg) - foot_jacobian(model, qm, leg)) @ nu / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(bias[leg] - fd)))
    return worst


def round_trip_residual(model: RobotModel, state: GeneralizedState, qddot: np.ndarray) -> float:
    """||FD(ID(qddot)) - qddot|| with the base rows of ID supplied as generalized force."""
    tau = inverse_dynamics(model, state, qddot)
    return float(np.abs(solve_acceleration(model, state, tau) - qddot).max())


@dataclass
class EnergyTrace:
    times: np.ndarray
    energy: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.abs(self.energy - self.energy[0]).max())

    @property
    def slope(self) -> float:
        """Least-squares secular drift rate (J/s); ignores bounded oscillation."""
        return float(np.polyfit(self.times, self.energy, 1)[0])


def internal_kinetic_energy(model: RobotModel, state: GeneralizedState) -> float:
    """T - |p|^2 / 2m; the base-linear rows of M map nu to total linear momentum p."""
    M = mass_matrix(model, state)
    p = M[:3] @ state.qdot
    return float(0.5 * state.qdot @ M @ state.qdot - p @ p / (2.0 * model.total_mass))


def passive_energy_trace(
    model: RobotModel,
    state: GeneralizedState,
    dt: float,
    duration: float,
    gravity: np.ndarray = ZERO_G,
    samples: int = 200,
    relative_to_com: bool = False,
) -> EnergyTrace:
    """Unactuated flight integrated with the semi-implicit scheme; records T + V.

    With ``relative_to_com`` the record is the kinetic energy of motion about the
    centre of mass. Uniform gravity cannot change it, so it isolates the joint and
    attitude dynamics from the (trivially parabolic) fall of the centre of mass.
    """
    n = int(round(duration / dt))
    every = max(1, n // samples)
    s = state.copy()
    zero = np.zeros(12)
    t, E = [], []
    for k in range(n + 1):
        if k % every == 0:
            t.append(k * dt)
            E.append(internal_kinetic_energy(model, s) if relative_to_com
                     else kinetic_energy(model, s) + potential_energy(model, s.q, gravity))
        if k < n:
            s = integrate(s, forward_dynamics(model, s, zero, None, gravity), dt)
    return EnergyTrace(np.array(t), np.array(E))


@dataclass
class SuiteResult:
    name: str
    value: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = bool(self.value < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<34} worst={self.value:.3e}  tol={self.tol:.1e}"


def run_suite(
    model: RobotModel,
    n_states: int = 100,
    n_energy: int = 2,
    seed: int = 0,
    energy_dt: float = 1e-4,
    energy_duration: float = 1.0,
    energy_vel_scale: float = 0.5,
) -> list[SuiteResult]:
    """Algebraic checks over ``n_states`` random states plus ``n_energy`` flight audits.

    The flight audit reports the worst |E(t) - E(0)| over ``energy_duration``
    seconds of unactuated, gravity-free motion from the nominal posture.
    """
    rng = np.random.default_rng(seed)
    states = [random_state(rng) for _ in range(n_states)]
    sym = max(symmetry_residual(model, s) for s in states)
    eig = min(min_eigenvalue(model, s) for s in states)
    cr = max(crba_rnea_residual(model, s) for s in states)
    jac = max(jacobian_fd_residual(model, s.q) for s in states)
    drift = 0.0
    for k in range(n_energy):
        s = nominal_state(model)
        s.qdot = np.random.default_rng(seed + 1000 + k).normal(scale=energy_vel_scale, size=NV)
        drift = max(drift, passive_energy_trace(model, s, energy_dt, energy_duration).max_deviation)
    return [
        SuiteResult("mass matrix symmetry", sym, 1e-10),
        SuiteResult("mass matrix positive definite", -eig, 0.0),
        SuiteResult("CRBA vs RNEA columns", cr, 1e-8),
        SuiteResult("foot Jacobian vs finite diff (rel)", jac, 1e-5),
        SuiteResult("passive energy deviation (J)", drift, 1e-3),
    ]
