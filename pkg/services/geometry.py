"""SE(3) mathematics: rotations, rigid transforms, Euler angles and alignment.

Conventions used everywhere in the engine:

* meters and radians;
* Euler angles are intrinsic X-Y-Z (``R = Rx(rx) @ Ry(ry) @ Rz(rz)``);
* quaternions are written scalar-first ``(w, x, y, z)`` and kept canonical
  (``w >= 0``), which is also the on-disk 7-number pose form
  ``(tx, ty, tz, qw, qx, qy, qz)``.

A ``Rotation`` stores its canonical unit quaternion as the source of truth and
derives the matrix from it. Serialising the quaternion therefore round-trips
bit-exactly, and long compose chains cannot drift away from SO(3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation as _SciRotation

from utils.errors import AugmentError

ORTHONORMAL_TOLERANCE = 1e-9
GIMBAL_MARGIN = 1e-6
_NORM_SLACK = 4 * np.finfo(float).eps


class GimbalLockError(AugmentError):
    """Raised when Euler angles are requested at (or within 1e-6 rad of) |ry| = pi/2."""


def _canonical_quat(quat: Iterable[float]) -> np.ndarray:
    q = np.array(quat, dtype=float).reshape(4)
    norm = float(np.linalg.norm(q))
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError("quaternion must be finite and nonzero")
    if abs(norm - 1.0) > _NORM_SLACK:
        q = q / norm
    if q[0] < 0 or (q[0] == 0 and q[np.flatnonzero(q[1:])[0] + 1] < 0):
        q = -q
    return q


def orthonormality_error(matrix: np.ndarray) -> float:
    """Largest absolute entry of ``M @ M.T - I``."""

    m = np.asarray(matrix, dtype=float)
    return float(np.max(np.abs(m @ m.T - np.eye(3))))


@dataclass(frozen=True, slots=True, eq=False)
class Rotation:
    """Element of SO(3) held as a canonical scalar-first unit quaternion."""

    quat: np.ndarray
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        q = _canonical_quat(self.quat)
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)
        m = _SciRotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_quat(cls, quat_wxyz: Sequence[float]) -> "Rotation":
        return cls(np.asarray(quat_wxyz, dtype=float))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Rotation":
        m = np.asarray(matrix, dtype=float).reshape(3, 3)
        if orthonormality_error(m) > ORTHONORMAL_TOLERANCE:
            m, _ = polar(m)
        if np.linalg.det(m) <= 0:
            raise ValueError("rotation matrix must have det = +1")
        x, y, z, w = _SciRotation.from_matrix(m).as_quat()
        return cls(np.array([w, x, y, z]))

    @classmethod
    def from_euler(cls, rx: float, ry: float, rz: float) -> "Rotation":
        return cls._from_scipy(_SciRotation.from_euler("XYZ", [rx, ry, rz]))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> "Rotation":
        return cls._from_scipy(_SciRotation.from_rotvec(np.asarray(rotvec, dtype=float)))

    @classmethod
    def about_axis(cls, axis: Sequence[float], angle: float) -> "Rotation":
        a = np.asarray(axis, dtype=float)
        return cls.from_rotvec(a / np.linalg.norm(a) * angle)

    @classmethod
    def _from_scipy(cls, rot: _SciRotation) -> "Rotation":
        x, y, z, w = rot.as_quat()
        return cls(np.array([w, x, y, z]))

    def _scipy(self) -> _SciRotation:
        w, x, y, z = self.quat
        return _SciRotation.from_quat([x, y, z, w])

    def as_euler(self) -> Tuple[float, float, float]:
        """Intrinsic XYZ angles; raises GimbalLockError near |ry| = pi/2."""

        m = self.matrix
        if math.hypot(m[0, 0], m[0, 1]) < math.sin(GIMBAL_MARGIN):
            raise GimbalLockError("rotation is at gimbal lock for intrinsic XYZ angles")
        rx, ry, rz = self._scipy().as_euler("XYZ")
        return float(rx), float(ry), float(rz)

    def as_rotvec(self) -> np.ndarray:
        return self._scipy().as_rotvec()

    def angle(self) -> float:
        """Geodesic angle to the identity, in [0, pi]."""

        return float(2.0 * math.atan2(float(np.linalg.norm(self.quat[1:])), abs(float(self.quat[0]))))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, vector: Sequence[float]) -> np.ndarray:
        return self.matrix @ np.asarray(vector, dtype=float)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation._from_scipy(self._scipy() * other._scipy())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Rotation) and np.array_equal(self.quat, other.quat)

    __hash__ = None  # type: ignore[assignment]


def euler_to_rotation(rx: float, ry: float, rz: float) -> Rotation:
    return Rotation.from_euler(rx, ry, rz)


def rotation_to_euler(rotation: Rotation) -> Tuple[float, float, float]:
    return rotation.as_euler()


def geodesic_distance(a: Rotation, b: Rotation) -> float:
    return (a.inverse() @ b).angle()


@dataclass(frozen=True, slots=True, eq=False)
class Pose:
    """Rigid pose: rotation plus translation in meters."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(Rotation.identity(), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        m = np.asarray(matrix, dtype=float)
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_array7(cls, values: Sequence[float]) -> "Pose":
        v = [float(x) for x in values]
        if len(v) != 7:
            raise ValueError("pose arrays hold exactly 7 numbers")
        return cls(Rotation.from_quat(v[3:]), np.array(v[:3]))

    def to_array7(self) -> list[float]:
        return [float(x) for x in self.translation] + [float(x) for x in self.rotation.quat]

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        inv = self.rotation.inverse()
        return Pose(inv, -(inv.matrix @ self.translation))

    def transform_point(self, point: Sequence[float]) -> np.ndarray:
        return self.rotation.matrix @ np.asarray(point, dtype=float) + self.translation

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (..., 3) array of points."""

        return np.asarray(points, dtype=float) @ self.rotation.matrix.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Pose)
            and self.rotation == other.rotation
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
            and geodesic_distance(self.rotation, other.rotation) <= atol
        )


# A frame-change operator has the same data as a pose.
RigidTransform = Pose


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b``: apply ``b`` first, then ``a``."""

    return Pose(a.rotation @ b.rotation, a.rotation.matrix @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def align_pose(pose: Pose, transform: RigidTransform) -> Pose:
    """Express a target-robot end-effector pose in the source robot's frame."""

    return compose(transform, pose)


class ActionKind(str, Enum):
    ABSOLUTE = "absolute"
    DELTA = "delta"


@dataclass(frozen=True, slots=True, eq=False)
class Action:
    """End-effector command: absolute target or delta, plus gripper channel in [0, 1]."""

    kind: ActionKind
    pose: Pose
    gripper: float

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.gripper) <= 1.0:
            raise ValueError("gripper channel must be within [0, 1]")
        object.__setattr__(self, "kind", ActionKind(self.kind))
        object.__setattr__(self, "gripper", float(self.gripper))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Action)
            and self.kind == other.kind
            and self.pose == other.pose
            and self.gripper == other.gripper
        )

    __hash__ = None  # type: ignore[assignment]


def align_action(action: Action, transform: RigidTransform) -> Action:
    """Map an action through the alignment transform.

    Absolute targets move like poses. Deltas are frame-free displacements, so
    their rotation is conjugated and their translation only rotated.
    """

    if action.kind is ActionKind.ABSOLUTE:
        return Action(action.kind, align_pose(action.pose, transform), action.gripper)

    r = transform.rotation
    delta = Pose(r @ action.pose.rotation @ r.inverse(), r.matrix @ action.pose.translation)
    return Action(action.kind, delta, action.gripper)
