"""Kinematics of a 6-DOF remote-center-of-motion arm (PSM-like).

Joint order: outer yaw, outer pitch, insertion (prismatic), instrument roll,
wrist pitch, wrist yaw.  Yaw and pitch axes intersect at the RCM, so the
instrument shaft always passes through that point.  At ``q = 0`` the shaft
points along ``-z`` of the base frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES = ("yaw", "pitch", "insertion", "roll", "wrist-pitch", "wrist-yaw")
REVOLUTE = (True, True, False, True, True, True)
SINGULAR_SENTINEL = float("inf")

_DEFAULT_LIMITS = (
    (-1.2, 1.2),
    (-0.8, 0.8),
    (-0.07, 0.10),
    (-2.5, 2.5),
    (-np.pi / 2, np.pi / 2),
    (-np.pi / 2, np.pi / 2),
)


class JointLimitError(ValueError):
    pass


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class KinematicModel:
    """Link parameters in meters; limits are ``(low, high)`` per joint.

    ``nominal_depth`` is the RCM-to-wrist distance at ``q3 = 0``; insertion
    ``q3`` is measured relative to it.
    """

    rcm_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    nominal_depth: float = 0.12
    shaft_length: float = 0.416
    pitch_to_yaw: float = 0.0091
    yaw_to_tip: float = 0.0102
    limits: tuple[tuple[float, float], ...] = field(default=_DEFAULT_LIMITS)

    def __post_init__(self):
        object.__setattr__(self, "rcm_position", tuple(float(v) for v in self.rcm_position))
        object.__setattr__(self, "limits", tuple((float(a), float(b)) for a, b in self.limits))
        if len(self.limits) != 6 or any(lo > hi for lo, hi in self.limits):
            raise ValueError("need six (low, high) joint limits")
        if min(self.nominal_depth, self.shaft_length, self.yaw_to_tip) <= 0 or self.pitch_to_yaw < 0:
            raise ValueError("link lengths must be positive")
        lo, hi = self.limits[2]
        if self.nominal_depth + lo <= 0:
            raise ValueError("insertion limits would retract the tool tip past the RCM")
        if self.nominal_depth + hi > self.shaft_length:
            raise ValueError("insertion limits exceed the instrument shaft length")

    @classmethod
    def from_config(cls, cfg: dict | None) -> "KinematicModel":
        cfg = dict(cfg or {})
        if "limits" in cfg:
            cfg["limits"] = tuple(tuple(x) for x in cfg["limits"])
        return cls(**cfg)

    @property
    def rcm(self) -> np.ndarray:
        return np.array(self.rcm_position)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.limits])

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(6)
        for i, (v, (lo, hi)) in enumerate(zip(q, self.limits)):
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise JointLimitError(
                    f"joint {i + 1} ({JOINT_NAMES[i]}) = {v:.6g} outside [{lo:.6g}, {hi:.6g}]"
                )
        return q


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class ChainState:
    """Joint axes and anchor points in the base frame for one configuration."""

    axes: np.ndarray       # (6, 3) unit joint axes
    origins: np.ndarray    # (6, 3) a point on each joint axis
    wrist: np.ndarray      # shaft end, on the wrist-pitch axis
    tip: np.ndarray
    rotation: np.ndarray   # tool rotation

    @property
    def shaft_axis(self) -> np.ndarray:
        return self.axes[2]


def chain(model: KinematicModel, q, check: bool = True) -> ChainState:
    q = model.check_limits(q) if check else np.asarray(q, dtype=float).reshape(6)
    p0 = model.rcm
    R1 = rot_x(q[0])
    R2 = R1 @ rot_y(q[1])
    shaft = -R2[:, 2]
    wrist = p0 + (model.nominal_depth + q[2]) * shaft
    R4 = R2 @ rot_z(q[3])
    R5 = R4 @ rot_x(q[4])
    p6 = wrist - model.pitch_to_yaw * R5[:, 2]
    R6 = R5 @ rot_y(q[5])
    tip = p6 - model.yaw_to_tip * R6[:, 2]
    axes = np.array([
        [1.0, 0.0, 0.0],
        R1[:, 1],
        shaft,
        R2[:, 2],
        R4[:, 0],
        R5[:, 1],
    ])
    origins = np.array([p0, p0, wrist, wrist, wrist, p6])
    return ChainState(axes, origins, wrist, tip, R6)


def forward_kinematics(model: KinematicModel, q) -> Pose:
    """Tool-tip pose in the base frame; raises JointLimitError outside limits."""
    st = chain(model, q)
    return Pose(st.rotation, st.tip)


def point_jacobian(st: ChainState, point, joints=range(6)) -> np.ndarray:
    """3x6 linear-velocity Jacobian of a point rigidly carried by the listed joints."""
    point = np.asarray(point, dtype=float)
    J = np.zeros((3, 6))
    for i in joints:
        a = st.axes[i]
        J[:, i] = np.cross(a, point - st.origins[i]) if REVOLUTE[i] else a
    return J


def jacobian(model: KinematicModel, q) -> np.ndarray:
    """Geometric Jacobian at the tool tip: rows 0-2 linear, rows 3-5 angular (space frame)."""
    st = chain(model, q)
    J = np.zeros((6, 6))
    J[:3] = point_jacobian(st, st.tip)
    for i in range(6):
        if REVOLUTE[i]:
            J[3:, i] = st.axes[i]
    return J


def condition_number(J) -> float:
    """Ratio of extreme singular values, ``inf`` when the smallest is below 1e-12."""
    s = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    if s[-1] < 1e-12:
        return SINGULAR_SENTINEL
    return float(s[0] / s[-1])


def rcm_deviation(model: KinematicModel, q) -> float:
    """Distance from the RCM point to the instrument shaft line."""
    st = chain(model, q)
    d = st.shaft_axis
    v = model.rcm - st.wrist
    return float(np.linalg.norm(v - (v @ d) * d))


def random_configuration(model: KinematicModel, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray:
    lo, hi = model.lower, model.upper
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)
