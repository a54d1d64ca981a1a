"""Rigid-body frames and serial-arm kinematics.

Vectors are plain ``(3,)`` float64 arrays. Frames compose left to right, so
``a @ b`` maps points expressed in ``b``'s child frame through ``b`` and then
``a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

UR10_DH_FILE = "ur10_dh.txt"
DEFAULT_MONITORED_JOINTS = (1, 2, 3, 5)


class KinematicsError(ValueError):
    """Raised for inputs outside an arm's valid domain."""


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    @classmethod
    def from_xyz_yaw(cls, xyz, yaw: float = 0.0) -> "Transform":
        return cls(rot_z(yaw), np.asarray(xyz, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map a point or an ``(n, 3)`` stack of points through the frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class DhRow:
    a: float
    d: float
    alpha: float
    theta_offset: float = 0.0

    def matrix(self, theta: float) -> np.ndarray:
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array(
            [
                [ct, -st * ca, st * sa, self.a * ct],
                [st, ct * ca, -ct * sa, self.a * st],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )


def load_dh_table(path: str | Path | None = None) -> list[DhRow]:
    """Read a whitespace-separated ``a d alpha theta_offset`` table.

    ``None`` loads the UR10 table shipped with the package.
    """
    if path is None:
        text = resources.files("mldsim.data").joinpath(UR10_DH_FILE).read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != 4:
            raise KinematicsError(f"DH table line {lineno}: expected 4 columns, got {len(cols)}")
        vals = [float(c) for c in cols]
        if not np.all(np.isfinite(vals)):
            raise KinematicsError(f"DH table line {lineno}: non-finite value")
        rows.append(DhRow(*vals))
    return rows


@dataclass(frozen=True)
class ArmModel:
    dh: tuple[DhRow, ...]
    base: Transform = field(default_factory=Transform)
    joint_limits: np.ndarray = field(
        default_factory=lambda: np.tile([-2 * np.pi, 2 * np.pi], (6, 1))
    )
    vel_limits: np.ndarray = field(default_factory=lambda: np.ones(6))
    monitored_joints: tuple[int, ...] = DEFAULT_MONITORED_JOINTS

    def __post_init__(self):
        object.__setattr__(self, "dh", tuple(self.dh))
        lim = np.asarray(self.joint_limits, dtype=float).reshape(6, 2)
        vel = np.broadcast_to(np.asarray(self.vel_limits, dtype=float), (6,)).copy()
        object.__setattr__(self, "joint_limits", lim)
        object.__setattr__(self, "vel_limits", vel)
        object.__setattr__(self, "monitored_joints", tuple(int(j) for j in self.monitored_joints))
        if len(self.dh) != 6:
            raise KinematicsError(f"arm needs 6 DH rows, got {len(self.dh)}")
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise KinematicsError("joint_limits: lower bound must be below upper bound")
        if np.any(vel <= 0):
            raise KinematicsError("vel_limits must be positive")
        mj = self.monitored_joints
        if len(mj) != 4 or any(b <= a for a, b in zip(mj, mj[1:])) or mj[0] < 0 or mj[-1] > 5:
            raise KinematicsError(f"monitored_joints must be 4 increasing indices in 0..5, got {mj}")

    @classmethod
    def ur10(cls, base: Transform | None = None, **kwargs) -> "ArmModel":
        return cls(dh=tuple(load_dh_table()), base=base or Transform(), **kwargs)

    def link_lengths(self) -> np.ndarray:
        """Distance between consecutive frame origins; constant for DH chains."""
        return np.array([np.hypot(r.a, r.d) for r in self.dh])

    def longest_links(self, count: int = 2) -> list[int]:
        """Indices ``k`` of the longest links, each spanning frames ``k`` and ``k + 1``."""
        order = np.argsort(-self.link_lengths(), kind="stable")
        return sorted(int(k) for k in order[:count])


def _check_q(arm: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (6,):
        raise KinematicsError(f"joint vector must have 6 entries, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise KinematicsError("joint vector is not finite")
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    if np.any(q < lo) or np.any(q > hi):
        raise KinematicsError(f"joint vector {q} outside joint limits")
    return q


def fk(arm: ArmModel, q) -> list[Transform]:
    """World frames of the base, each joint and the tool flange (7 frames)."""
    q = _check_q(arm, q)
    m = arm.base.matrix()
    frames = [arm.base]
    for row, angle in zip(arm.dh, q):
        m = m @ row.matrix(angle + row.theta_offset)
        frames.append(Transform.from_matrix(m))
    return frames


_ORIGIN_CACHE: dict = {}
_ORIGIN_CACHE_SIZE = 64


def joint_origins(arm: ArmModel, q) -> np.ndarray:
    """``(7, 3)`` world positions of all frame origins (memoised per arm and q)."""
    q = np.asarray(q, dtype=float)
    key = (id(arm), q.tobytes())
    hit = _ORIGIN_CACHE.get(key)
    if hit is not None and hit[0] is arm:
        return hit[1].copy()
    origins = np.array([f.translation for f in fk(arm, q)])
    if len(_ORIGIN_CACHE) >= _ORIGIN_CACHE_SIZE:
        _ORIGIN_CACHE.pop(next(iter(_ORIGIN_CACHE)))
    # the arm is stored so its id cannot be recycled while cached
    _ORIGIN_CACHE[key] = (arm, origins)
    return origins.copy()


def monitored_joint_positions(arm: ArmModel, q) -> np.ndarray:
    """``(4, 3)`` world positions of the monitored joints.

    Joint index ``j`` sits at the origin of frame ``j + 1``; index 5 is the
    tool flange.
    """
    origins = joint_origins(arm, q)
    return origins[[j + 1 for j in arm.monitored_joints]]


def end_effector_position(arm: ArmModel, q) -> np.ndarray:
    return joint_origins(arm, q)[-1]


def sample_link_points(p_a, p_b, n: int = 100) -> np.ndarray:
    """``n`` evenly spaced points on the segment from ``p_a`` to ``p_b``, endpoints included."""
    if n < 2:
        raise KinematicsError(f"need at least 2 samples per link, got {n}")
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    t = np.arange(n, dtype=float)[:, None] / (n - 1)
    pts = p_a + t * (p_b - p_a)
    pts[0] = p_a
    pts[-1] = p_b
    return pts


def integrate_joints(arm: ArmModel, q, qdot, dt: float) -> np.ndarray:
    """One explicit Euler step with velocity clamping before integration."""
    if not dt > 0:
        raise KinematicsError(f"dt must be positive, got {dt}")
    qdot = np.asarray(qdot, dtype=float)
    if qdot.shape != (6,) or not np.all(np.isfinite(qdot)):
        raise KinematicsError(f"joint velocities must be 6 finite values, got {qdot}")
    qdot = np.clip(qdot, -arm.vel_limits, arm.vel_limits)
    q_next = np.asarray(q, dtype=float) + qdot * dt
    return np.clip(q_next, arm.joint_limits[:, 0], arm.joint_limits[:, 1])
