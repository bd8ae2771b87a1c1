"""Contact estimation: torque-based force estimate, filtered acceleration, and hysteretic contact state.

Base pose and velocity are taken from the simulator; only contact is estimated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_coeffs

from .rbd import S_MATRIX, GeneralizedState, RobotModel, contact_jacobian, contact_set, mass_matrix, nonlinear_effects

ON_THRESHOLD = 0.6
OFF_THRESHOLD = 0.4
CANDIDATE_HEIGHT = 0.02


def estimate_contact_forces(
    model: RobotModel,
    state: GeneralizedState,
    tau: np.ndarray,
    qddot: np.ndarray,
    candidates,
) -> np.ndarray:
    """F = -(J_c^T)^+ (S^T tau - M qddot - eta) over the candidate legs; (4, 3), zeros elsewhere."""
    out = np.zeros((4, 3))
    flags = tuple(bool(c) for c in candidates)
    if not any(flags):
        return out
    contacts = contact_set(model, state.q, flags)
    Jc, _, _ = contact_jacobian(model, state, contacts)
    M = mass_matrix(model, state)
    rhs = S_MATRIX.T @ np.asarray(tau, float) - M @ qddot - nonlinear_effects(model, state)
    F = -np.linalg.pinv(Jc.T) @ rhs
    out[contacts.legs] = F.reshape(-1, 3)
    return out


class AccelerationFilter:
    """Causal Savitzky-Golay derivative of the velocity stream, evaluated at the newest sample."""

    def __init__(self, dt: float, window: int = 9, order: int = 2) -> None:
        if window <= order or window < 2:
            raise ValueError("window must exceed the polynomial order")
        self.coeffs = savgol_coeffs(window, order, deriv=1, delta=dt, pos=window - 1, use="dot")
        self.history: deque = deque(maxlen=window)
        self.dt = dt

    def update(self, qdot: np.ndarray) -> np.ndarray:
        self.history.append(np.array(qdot, dtype=float))
        n = len(self.history)
        if n < 2:
            return np.zeros_like(self.history[-1])
        if n < len(self.coeffs):
            return (self.history[-1] - self.history[-2]) / self.dt
        return self.coeffs @ np.array(self.history)


def filtered_acceleration(qdot_history: np.ndarray, dt: float, window: int = 9, order: int = 2) -> np.ndarray:
    """Least-squares polynomial derivative of the last ``window`` velocity samples at the newest one."""
    h = np.asarray(qdot_history, float)
    if h.shape[0] < window:
        raise ValueError(f"need at least {window} samples, got {h.shape[0]}")
    c = savgol_coeffs(window, order, deriv=1, delta=dt, pos=window - 1, use="dot")
    return c @ h[-window:]


def _logistic(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ContactEvidence:
    """Logistic centres/scales for the force and height terms, schedule prior and fusion weights."""

    force_mid: float = 15.0  # N
    force_scale: float = 3.0
    height_mid: float = 0.015  # m
    height_scale: float = 0.003
    schedule_stance: float = 0.95
    schedule_swing: float = 0.05
    weights: tuple = (1.0, 1.0, 1.0)


def contact_probability(
    normal_force: np.ndarray, foot_height: np.ndarray, scheduled: np.ndarray, ev: ContactEvidence | None = None
) -> np.ndarray:
    """Weighted mean of three bounded evidence terms per leg."""
    ev = ev or ContactEvidence()
    p_force = _logistic((np.asarray(normal_force, float) - ev.force_mid) / ev.force_scale)
    p_height = _logistic((ev.height_mid - np.asarray(foot_height, float)) / ev.height_scale)
    p_sched = np.where(np.asarray(scheduled, bool), ev.schedule_stance, ev.schedule_swing)
    w = np.asarray(ev.weights, float)
    return (w[0] * p_force + w[1] * p_height + w[2] * p_sched) / w.sum()


def hysteresis_contact_state(p: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """On at P >= 0.6, off at P <= 0.4, otherwise keep the previous state."""
    p = np.asarray(p, float)
    return np.where(p >= ON_THRESHOLD, True, np.where(p <= OFF_THRESHOLD, False, np.asarray(previous, bool)))


@dataclass
class ContactBelief:
    probability: np.ndarray = field(default_factory=lambda: np.ones(4))
    state: np.ndarray = field(default_factory=lambda: np.ones(4, bool))
    forces: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))


class ContactEstimator:
    """Per-tick pipeline: filtered qddot, force estimate over candidates, fusion, hysteresis."""

    def __init__(self, model: RobotModel, dt: float, window: int = 9, order: int = 2,
                 evidence: ContactEvidence | None = None, ground: float = 0.0) -> None:
        self.model = model
        self.filter = AccelerationFilter(dt, window, order)
        self.evidence = evidence or ContactEvidence()
        self.ground = ground
        self.belief = ContactBelief()

    def update(self, state: GeneralizedState, tau: np.ndarray, scheduled: np.ndarray, feet: np.ndarray) -> ContactBelief:
        qddot = self.filter.update(state.qdot)
        height = feet[:, 2] - self.ground
        candidates = (height < CANDIDATE_HEIGHT) | np.asarray(scheduled, bool)
        F = estimate_contact_forces(self.model, state, tau, qddot, candidates)
        p = contact_probability(F[:, 2], height, scheduled, self.evidence)
        s = hysteresis_contact_state(p, self.belief.state)
        self.belief = ContactBelief(p, s, F)
        return self.belief
