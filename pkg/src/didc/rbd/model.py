"""Robot description: kinematic tree, inertial parameters and generalized state."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .rotations import euler_to_rot, skew

LEG_NAMES = ("FL", "FR", "RL", "RR")
N_BASE = 6
N_JOINTS = 12
NV = N_BASE + N_JOINTS


class ModelError(ValueError):
    """Raised for malformed or physically invalid robot descriptions."""


def _inertia_matrix(vals) -> np.ndarray:
    v = np.asarray(vals, dtype=float)
    if v.shape == (3, 3):
        return v.copy()
    if v.shape != (6,):
        raise ModelError(f"inertia must be 6 values or 3x3, got shape {v.shape}")
    ixx, iyy, izz, ixy, ixz, iyz = v
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def spatial_inertia(mass: float, com: np.ndarray, inertia_com: np.ndarray) -> np.ndarray:
    """6x6 spatial inertia about the frame origin, [angular; linear] ordering."""
    C = skew(com)
    I = np.zeros((6, 6))
    I[:3, :3] = inertia_com + mass * C @ C.T
    I[:3, 3:] = mass * C
    I[3:, :3] = mass * C.T
    I[3:, 3:] = mass * np.eye(3)
    return I


@dataclass
class Body:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    parent: int = -1
    axis: np.ndarray | None = None
    origin: np.ndarray | None = None
    rot_tree: np.ndarray | None = None

    def validate(self) -> None:
        if not self.mass > 0.0:
            raise ModelError(f"{self.name}: mass must be positive, got {self.mass}")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise ModelError(f"{self.name}: inertia is not symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0.0:
            raise ModelError(f"{self.name}: inertia is not positive definite")


@dataclass
class Foot:
    leg: int
    body: int
    offset: np.ndarray


@dataclass
class RobotModel:
    """Floating base (body 0) plus twelve revolute links (bodies 1..12).

    Link ``k`` is actuated by generalized coordinate ``6 + k - 1``; leg ``l``
    owns bodies ``3l+1 .. 3l+3``.
    """

    name: str
    bodies: list[Body]
    feet: list[Foot]
    max_leg_extension: float
    spatial_inertias: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.validate()
        self.spatial_inertias = [spatial_inertia(b.mass, b.com, b.inertia) for b in self.bodies]
        # per-leg arrays indexed [leg, level, ...] for the batched recursions
        links = self.bodies[1:]
        self.leg_axis = np.array([b.axis for b in links]).reshape(4, 3, 3)
        self.leg_origin = np.array([b.origin for b in links]).reshape(4, 3, 3)
        self.leg_rot_tree = np.array([b.rot_tree for b in links]).reshape(4, 3, 3, 3)
        self.leg_inertia = np.array(self.spatial_inertias[1:]).reshape(4, 3, 6, 6)
        self.leg_mass = np.array([b.mass for b in links]).reshape(4, 3)
        self.leg_com = np.array([b.com for b in links]).reshape(4, 3, 3)
        self.foot_offset = np.array([f.offset for f in self.feet])

    def validate(self) -> None:
        if len(self.bodies) != 1 + N_JOINTS:
            raise ModelError(f"expected 1 base + {N_JOINTS} links, got {len(self.bodies)} bodies")
        for b in self.bodies:
            b.validate()
        for k, b in enumerate(self.bodies[1:], start=1):
            level = (k - 1) % 3
            expected = 0 if level == 0 else k - 1
            if b.parent != expected:
                raise ModelError(
                    f"{b.name}: each leg must be a serial chain of three links listed "
                    f"FL, FR, RL, RR (expected parent body {expected}, got {b.parent})"
                )
            if b.axis is None or abs(np.linalg.norm(b.axis) - 1.0) > 1e-9:
                raise ModelError(f"{b.name}: joint axis must be a unit vector")
        if sorted(f.leg for f in self.feet) != [0, 1, 2, 3]:
            raise ModelError("need exactly one foot per leg")
        self.feet.sort(key=lambda f: f.leg)
        for f in self.feet:
            if f.body != 3 * f.leg + 3:
                raise ModelError(f"foot of leg {LEG_NAMES[f.leg]} must sit on the last link of its chain")
        if not self.max_leg_extension > 0.0:
            raise ModelError("max_leg_extension must be positive")

    @property
    def total_mass(self) -> float:
        return float(sum(b.mass for b in self.bodies))

    @property
    def parents(self) -> list[int]:
        return [b.parent for b in self.bodies]

    def leg_bodies(self, leg: int) -> list[int]:
        """Bodies from the base to the foot of ``leg``."""
        chain = []
        k = self.feet[leg].body
        while k != 0:
            chain.append(k)
            k = self.bodies[k].parent
        return chain[::-1]

    def hip_offsets(self) -> np.ndarray:
        """(4, 3) positions of each leg's second joint at zero joint angles, base frame.

        Used as the leg's hip point for foothold planning.
        """
        out = np.zeros((4, 3))
        for leg in range(4):
            p = np.zeros(3)
            R = np.eye(3)
            for k in self.leg_bodies(leg)[:2]:
                b = self.bodies[k]
                p = p + R @ b.origin
                R = R @ b.rot_tree
            out[leg] = p
        return out

    def scaled(self, mass_scale: float) -> "RobotModel":
        """Copy with every mass and inertia scaled (controller-side model mismatch)."""
        bodies = [
            Body(b.name, b.mass * mass_scale, b.com.copy(), b.inertia * mass_scale, b.parent,
                 None if b.axis is None else b.axis.copy(),
                 None if b.origin is None else b.origin.copy(),
                 None if b.rot_tree is None else b.rot_tree.copy())
            for b in self.bodies
        ]
        feet = [Foot(f.leg, f.body, f.offset.copy()) for f in self.feet]
        return RobotModel(self.name, bodies, feet, self.max_leg_extension)


def model_from_dict(d: dict) -> RobotModel:
    try:
        base = d["base"]
        bodies = [Body("base", float(base["mass"]), np.asarray(base.get("com", [0, 0, 0]), float),
                       _inertia_matrix(base["inertia"]))]
        index = {"base": 0}
        for link in d["links"]:
            if link["parent"] not in index:
                raise ModelError(f"{link['name']}: unknown parent {link['parent']!r}")
            axis = np.asarray(link["axis"], float)
            n = np.linalg.norm(axis)
            if n == 0.0:
                raise ModelError(f"{link['name']}: zero joint axis")
            bodies.append(Body(
                name=link["name"],
                mass=float(link["mass"]),
                com=np.asarray(link.get("com", [0, 0, 0]), float),
                inertia=_inertia_matrix(link["inertia"]),
                parent=index[link["parent"]],
                axis=axis / n,
                origin=np.asarray(link["origin"], float),
                rot_tree=euler_to_rot(np.asarray(link.get("rpy", [0, 0, 0]), float)),
            ))
            index[link["name"]] = len(bodies) - 1
        feet = []
        for f in d["feet"]:
            leg = f["leg"]
            leg = LEG_NAMES.index(leg) if isinstance(leg, str) else int(leg)
            if f["parent"] not in index:
                raise ModelError(f"foot of leg {leg}: unknown parent {f['parent']!r}")
            feet.append(Foot(leg, index[f["parent"]], np.asarray(f["offset"], float)))
        return RobotModel(str(d.get("name", "robot")), bodies, feet, float(d["max_leg_extension"]))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model description: {exc!r}") from exc


def load_model(path: str | Path | None = None) -> RobotModel:
    """Load a YAML model; ``None`` loads the bundled Go2-like default."""
    if path is None:
        text = resources.files("didc.rbd").joinpath("data/go2_like.yaml").read_text()
    else:
        text = Path(path).read_text()
    d = yaml.safe_load(text)
    if not isinstance(d, dict):
        raise ModelError("model file is empty or not a mapping")
    return model_from_dict(d)


@dataclass
class GeneralizedState:
    """q = [base position, base euler (roll, pitch, yaw), 12 joints].

    qdot = [world linear velocity of the base origin, world angular velocity,
    12 joint rates]. Note qdot[3:6] is not d/dt of q[3:6]; see ``rbd.dynamics.integrate``.
    """

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float).reshape(NV)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(NV)

    @classmethod
    def zeros(cls) -> "GeneralizedState":
        return cls(np.zeros(NV), np.zeros(NV))

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.q.copy(), self.qdot.copy())


@dataclass(frozen=True)
class ContactSet:
    in_contact: tuple[bool, bool, bool, bool]
    positions: np.ndarray  # (n_c, 3), world frame, ascending leg order

    @property
    def n_c(self) -> int:
        return int(sum(self.in_contact))

    @property
    def legs(self) -> list[int]:
        return [i for i, c in enumerate(self.in_contact) if c]
