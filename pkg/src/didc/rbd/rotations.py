"""SO(3) helpers.

Orientation triples are (roll, pitch, yaw) composed as R = Rz(yaw) @ Ry(pitch) @ Rx(roll),
i.e. rotations about the fixed X, Y, Z axes applied in that order.
"""

from __future__ import annotations

import math

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def euler_to_rot(euler: np.ndarray) -> np.ndarray:
    roll, pitch, yaw = euler
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def rot_to_euler(R: np.ndarray, yaw_hint: float | None = None) -> np.ndarray:
    """Inverse of euler_to_rot for pitch in (-pi/2, pi/2).

    With ``yaw_hint`` the returned yaw is unwrapped to the branch closest to it.
    """
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    if yaw_hint is not None:
        yaw += 2.0 * math.pi * round((yaw_hint - yaw) / (2.0 * math.pi))
    return np.array([roll, pitch, yaw])


def euler_rate_matrix(euler: np.ndarray) -> np.ndarray:
    """E such that world angular velocity = E @ d(euler)/dt."""
    _, pitch, yaw = euler
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, -sy, 0.0],
        [sy * cp, cy, 0.0],
        [-sp, 0.0, 1.0],
    ])


def omega_to_euler_rates(euler: np.ndarray, omega_world: np.ndarray) -> np.ndarray:
    return np.linalg.solve(euler_rate_matrix(euler), omega_world)


def so3_exp(w: np.ndarray) -> np.ndarray:
    th = float(np.linalg.norm(w))
    if th < 1e-12:
        return np.eye(3) + skew(w)
    return axis_angle(w / th, th)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R (angle in [0, pi])."""
    c = 0.5 * (np.trace(R) - 1.0)
    c = max(-1.0, min(1.0, c))
    th = math.acos(c)
    if th < 1e-6:
        # first-order: R ~ I + [w]x
        return 0.5 * vee(R - R.T)
    if math.pi - th < 1e-6:
        # axis from the symmetric part: R ~ 2 a a^T - I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        a = B[:, k] / math.sqrt(B[k, k])
        return th * a / np.linalg.norm(a)
    return th / (2.0 * math.sin(th)) * vee(R - R.T)


def orientation_error(euler_des: np.ndarray, euler: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking R(euler) to R(euler_des)."""
    return so3_log(euler_to_rot(euler_des) @ euler_to_rot(euler).T)
