"""Floating-base rigid-body dynamics.

Internally the recursions run in Featherstone body coordinates (spatial vectors
ordered [angular; linear]) and are batched over the four leg chains. The public
generalized velocity is

    nu = [v_world (3), omega_world (3), qdot_joints (12)]

so base rows of M and eta are the world force and world moment about the base
origin. The two are related by the q-dependent map T of ``_base_map``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import NV, ContactSet, GeneralizedState, RobotModel
from .rotations import euler_rate_matrix, euler_to_rot, rot_to_euler, so3_exp

GRAVITY = np.array([0.0, 0.0, -9.81])

S_MATRIX = np.hstack([np.zeros((12, 6)), np.eye(12)])


class Poses(NamedTuple):
    R_base: np.ndarray  # (3, 3)
    p_base: np.ndarray  # (3,)
    R: np.ndarray  # (4, 3, 3, 3) world rotation of each link frame [leg, level]
    p: np.ndarray  # (4, 3, 3) world origin of each link frame
    feet: np.ndarray  # (4, 3)


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _link_rotations(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """(4, 3, 3, 3) rotation of each link frame relative to its parent."""
    ang = q[6:].reshape(4, 3)[..., None, None]
    K = _skew_batch(model.leg_axis)
    Rj = np.eye(3) + np.sin(ang) * K + (1.0 - np.cos(ang)) * (K @ K)
    return model.leg_rot_tree @ Rj


def _plucker(rel: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Batched parent->child motion transforms for child rotations ``rel`` at ``origin``."""
    E = np.swapaxes(rel, -1, -2)
    X = np.zeros(rel.shape[:-2] + (6, 6))
    X[..., :3, :3] = E
    X[..., 3:, 3:] = E
    X[..., 3:, :3] = -E @ _skew_batch(origin)
    return X


_I1 = [1, 2, 0]
_I2 = [2, 0, 1]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # take() on the last axis has far less call overhead than np.cross for tiny batches
    return a.take(_I1, -1) * b.take(_I2, -1) - a.take(_I2, -1) * b.take(_I1, -1)


def _mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", A, x)


def _mtv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...ji,...j->...i", A, x)


def _cross_motion(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    w, u = v[..., :3], v[..., 3:]
    return np.concatenate(
        [_cross(w, m[..., :3]), _cross(w, m[..., 3:]) + _cross(u, m[..., :3])], axis=-1
    )


def _cross_force(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    w, u = v[..., :3], v[..., 3:]
    return np.concatenate(
        [_cross(w, f[..., :3]) + _cross(u, f[..., 3:]), _cross(w, f[..., 3:])], axis=-1
    )


def _base_map(R: np.ndarray) -> np.ndarray:
    """T with [omega_body; v_body] = T @ [v_world; omega_world]."""
    T = np.zeros((6, 6))
    T[:3, 3:] = R.T
    T[3:, :3] = R.T
    return T


def world_poses(model: RobotModel, q: np.ndarray) -> Poses:
    Rb = euler_to_rot(q[3:6])
    pb = np.array(q[:3], dtype=float)
    rel = _link_rotations(model, q)
    R = np.empty((4, 3, 3, 3))
    p = np.empty((4, 3, 3))
    Rp = np.broadcast_to(Rb, (4, 3, 3))
    pp = np.broadcast_to(pb, (4, 3))
    for j in range(3):
        p[:, j] = pp + _mv(Rp, model.leg_origin[:, j])
        R[:, j] = Rp @ rel[:, j]
        Rp, pp = R[:, j], p[:, j]
    feet = p[:, 2] + _mv(R[:, 2], model.foot_offset)
    return Poses(Rb, pb, R, p, feet)


def foot_positions(model: RobotModel, q: np.ndarray) -> np.ndarray:
    return world_poses(model, q).feet


def contact_set(model: RobotModel, q: np.ndarray, flags) -> ContactSet:
    flags = tuple(bool(x) for x in flags)
    pos = foot_positions(model, q)
    return ContactSet(flags, pos[[i for i in range(4) if flags[i]]].reshape(-1, 3))


def inverse_dynamics(
    model: RobotModel,
    state: GeneralizedState,
    qddot: np.ndarray,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """Recursive Newton-Euler: generalized force producing ``qddot`` with no contacts."""
    q, nu = state.q, state.qdot
    R = euler_to_rot(q[3:6])
    T = _base_map(R)
    v0 = T @ nu[:6]
    # d/dt of the body-frame twist picks up -omega_b x v_b in the linear part
    a0 = T @ qddot[:6]
    a0[3:] -= _cross(v0[:3], v0[3:])
    a0[3:] -= R.T @ gravity

    X = _plucker(_link_rotations(model, q), model.leg_origin)  # (4, 3, 6, 6)
    S = np.concatenate([model.leg_axis, np.zeros((4, 3, 3))], axis=-1)  # (4, 3, 6)
    qd = nu[6:].reshape(4, 3)
    qdd = qddot[6:].reshape(4, 3)

    f = np.empty((4, 3, 6))
    vp = np.broadcast_to(v0, (4, 6))
    ap = np.broadcast_to(a0, (4, 6))
    for j in range(3):
        vj = S[:, j] * qd[:, j, None]
        v = _mv(X[:, j], vp) + vj
        a = _mv(X[:, j], ap) + S[:, j] * qdd[:, j, None] + _cross_motion(v, vj)
        I = model.leg_inertia[:, j]
        f[:, j] = _mv(I, a) + _cross_force(v, _mv(I, v))
        vp, ap = v, a

    tau = np.zeros(NV)
    tj = tau[6:].reshape(4, 3)
    for j in range(2, -1, -1):
        tj[:, j] = np.einsum("li,li->l", model.leg_axis[:, j], f[:, j, :3])
        if j > 0:
            f[:, j - 1] += _mtv(X[:, j], f[:, j])
    I0 = model.spatial_inertias[0]
    f0 = I0 @ a0 + _cross_force(v0, I0 @ v0) + _mtv(X[:, 0], f[:, 0]).sum(axis=0)
    tau[:6] = T.T @ f0
    return tau


def mass_matrix(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    """Composite-rigid-body algorithm."""
    q = state.q
    X = _plucker(_link_rotations(model, q), model.leg_origin)
    XT = np.swapaxes(X, -1, -2)
    Ic = model.leg_inertia.copy()
    Ic[:, 1] += XT[:, 2] @ Ic[:, 2] @ X[:, 2]
    Ic[:, 0] += XT[:, 1] @ Ic[:, 1] @ X[:, 1]
    Ib = model.spatial_inertias[0] + (XT[:, 0] @ Ic[:, 0] @ X[:, 0]).sum(axis=0)

    H = np.zeros((NV, NV))
    H[:6, :6] = Ib
    axis = model.leg_axis
    for j in range(3):
        F = np.einsum("lij,lj->li", Ic[:, j, :, :3], axis[:, j])  # (4, 6)
        cols = 6 + 3 * np.arange(4) + j
        H[cols, cols] = np.einsum("li,li->l", axis[:, j], F[:, :3])
        for k in range(j - 1, -1, -1):
            F = _mtv(X[:, k + 1], F)
            h = np.einsum("li,li->l", axis[:, k], F[:, :3])
            rows = 6 + 3 * np.arange(4) + k
            H[cols, rows] = h
            H[rows, cols] = h
        F = _mtv(X[:, 0], F)
        H[cols, :6] = F
        H[:6, cols] = F.T

    T = _base_map(euler_to_rot(q[3:6]))
    H[:6, :] = T.T @ H[:6, :]
    H[:, :6] = H[:, :6] @ T
    return H


def nonlinear_effects(
    model: RobotModel, state: GeneralizedState, gravity: np.ndarray = GRAVITY
) -> np.ndarray:
    return inverse_dynamics(model, state, np.zeros(NV), gravity)


def foot_jacobian(model: RobotModel, q: np.ndarray, leg: int, poses: Poses | None = None) -> np.ndarray:
    """3x18 world-frame Jacobian of the foot point of ``leg``."""
    P = poses if poses is not None else world_poses(model, q)
    pf = P.feet[leg]
    J = np.zeros((3, NV))
    J[:, :3] = np.eye(3)
    d = pf - P.p_base
    J[:, 3:6] = np.array([[0.0, d[2], -d[1]], [-d[2], 0.0, d[0]], [d[1], -d[0], 0.0]])
    z = _mv(P.R[leg], model.leg_axis[leg])  # (3, 3) world joint axes
    J[:, 6 + 3 * leg: 9 + 3 * leg] = _cross(z, pf - P.p[leg]).T
    return J


def contact_jacobian(
    model: RobotModel, state: GeneralizedState, contacts: ContactSet
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked contact Jacobian J_c and its base/joint column blocks (J_ab, J_aa)."""
    poses = world_poses(model, state.q)
    rows = [foot_jacobian(model, state.q, leg, poses) for leg in contacts.legs]
    Jc = np.vstack(rows) if rows else np.zeros((0, NV))
    return Jc, Jc[:, :6], Jc[:, 6:]


def foot_bias_accelerations(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    """(4, 3) foot-point accelerations at zero generalized acceleration (Jdot @ qdot)."""
    nu = state.qdot
    P = world_poses(model, state.q)
    qd = nu[6:].reshape(4, 3)
    wp = np.broadcast_to(nu[3:6], (4, 3))
    alp = np.zeros((4, 3))
    accp = np.zeros((4, 3))  # classical acceleration of the parent frame origin
    pp = np.broadcast_to(P.p_base, (4, 3))
    for j in range(3):
        r = P.p[:, j] - pp
        acc = accp + _cross(alp, r) + _cross(wp, _cross(wp, r))
        wj = _mv(P.R[:, j], model.leg_axis[:, j]) * qd[:, j, None]
        w = wp + wj
        al = alp + _cross(wp, wj)
        wp, alp, accp, pp = w, al, acc, P.p[:, j]
    r = P.feet - pp
    return accp + _cross(alp, r) + _cross(wp, _cross(wp, r))


def jacobian_dot_qdot(model: RobotModel, state: GeneralizedState, contacts: ContactSet) -> np.ndarray:
    bias = foot_bias_accelerations(model, state)
    return bias[contacts.legs].reshape(-1)


def forward_dynamics(
    model: RobotModel,
    state: GeneralizedState,
    tau: np.ndarray,
    foot_forces: np.ndarray | None = None,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """qddot = M^-1 (S^T tau + sum_i J_i^T F_i - eta); ``foot_forces`` is (4, 3) world."""
    M = mass_matrix(model, state)
    rhs = S_MATRIX.T @ np.asarray(tau, float) - nonlinear_effects(model, state, gravity)
    if foot_forces is not None:
        poses = world_poses(model, state.q)
        for leg in range(4):
            F = foot_forces[leg]
            if np.any(F):
                rhs += foot_jacobian(model, state.q, leg, poses).T @ F
    return np.linalg.solve(M, rhs)


def solve_acceleration(
    model: RobotModel,
    state: GeneralizedState,
    generalized_force: np.ndarray,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """qddot = M^-1 (f - eta) for an arbitrary 18-vector of generalized forces."""
    M = mass_matrix(model, state)
    return np.linalg.solve(M, np.asarray(generalized_force, float) - nonlinear_effects(model, state, gravity))


def qdot_to_coordinate_rates(q: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """dq/dt for the given generalized velocity (Euler-rate mapping on the base)."""
    dq = np.array(nu, dtype=float)
    dq[3:6] = np.linalg.solve(euler_rate_matrix(q[3:6]), nu[3:6])
    return dq


def integrate(state: GeneralizedState, qddot: np.ndarray, dt: float) -> GeneralizedState:
    """Semi-implicit Euler; base orientation advanced on SO(3) with the new angular rate."""
    nu = state.qdot + qddot * dt
    return advance_positions(state.q, nu, dt)


def advance_positions(q: np.ndarray, nu: np.ndarray, dt: float) -> GeneralizedState:
    qn = q + nu * dt
    R = so3_exp(nu[3:6] * dt) @ euler_to_rot(q[3:6])
    qn[3:6] = rot_to_euler(R, yaw_hint=q[5])
    return GeneralizedState(qn, nu)


def kinetic_energy(model: RobotModel, state: GeneralizedState) -> float:
    return float(0.5 * state.qdot @ mass_matrix(model, state) @ state.qdot)


def center_of_mass(model: RobotModel, q: np.ndarray) -> np.ndarray:
    P = world_poses(model, q)
    mb = model.bodies[0].mass
    c = mb * (P.p_base + P.R_base @ model.bodies[0].com)
    c = c + np.einsum("lj,lji->i", model.leg_mass, P.p + _mv(P.R, model.leg_com))
    return c / model.total_mass


def potential_energy(model: RobotModel, q: np.ndarray, gravity: np.ndarray = GRAVITY) -> float:
    return float(-model.total_mass * gravity @ center_of_mass(model, q))


def nominal_state(model: RobotModel, height: float | None = None, hip=0.0, thigh=0.8, knee=-1.5) -> GeneralizedState:
    """Symmetric standing posture; by default the base height puts the feet at z = 0."""
    q = np.zeros(NV)
    for leg in range(4):
        q[6 + 3 * leg: 9 + 3 * leg] = [hip, thigh, knee]
    if height is None:
        height = -float(foot_positions(model, q)[:, 2].mean())
    q[2] = height
    return GeneralizedState(q, np.zeros(NV))
