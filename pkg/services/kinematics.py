"""Serial-arm models, forward kinematics and damped-least-squares IK."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation as _SciRotation

from config import IKConfig
from services.geometry import Pose
from services.sampler import SeedPath, derive_stream
from utils.errors import AugmentError
from utils.logging import get_logger

logger = get_logger(__name__)

MIN_ARM_JOINTS = 5
MAX_ARM_JOINTS = 8
_LIMIT_SLACK = 1e-12


class JointLimitError(AugmentError):
    """Raised when a joint configuration leaves its limits."""


class IKUnreachableError(AugmentError):
    """Raised when IK fails from the seed and every restart.

    Carries the best-effort residuals and configuration.
    """

    def __init__(self, message: str, position_residual: float, rotation_residual: float, best: np.ndarray):
        super().__init__(message)
        self.position_residual = position_residual
        self.rotation_residual = rotation_residual
        self.best = best


@dataclass(frozen=True, slots=True, eq=False)
class JointSpec:
    name: str
    axis: np.ndarray
    origin: Pose
    limits: Tuple[float, float]

    def __post_init__(self) -> None:
        axis = np.array(self.axis, dtype=float).reshape(3)
        if abs(float(np.linalg.norm(axis)) - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name}: axis must be a unit vector")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"joint {self.name}: limits must satisfy lo < hi")


@dataclass(frozen=True, slots=True, eq=False)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float
    color: Tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")
        for name in ("a", "b"):
            point = np.array(getattr(self, name), dtype=float).reshape(3)
            point.setflags(write=False)
            object.__setattr__(self, name, point)


@dataclass(frozen=True, slots=True)
class LinkGeometry:
    capsules: Tuple[Capsule, ...] = ()


@dataclass(frozen=True, slots=True, eq=False)
class JointConfig:
    angles: np.ndarray

    def __post_init__(self) -> None:
        q = np.array(self.angles, dtype=float).reshape(-1)
        q.setflags(write=False)
        object.__setattr__(self, "angles", q)

    def __len__(self) -> int:
        return len(self.angles)

    def to_list(self) -> List[float]:
        return [float(x) for x in self.angles]


@dataclass(frozen=True, slots=True, eq=False)
class KinematicChain:
    """A revolute serial arm.

    ``links[0]`` is the base link; ``links[i + 1]`` rides on joint ``i``.
    Kinematics are expressed in the base frame; ``mount`` places the base in
    the world.
    """

    name: str
    joints: Tuple[JointSpec, ...]
    links: Tuple[LinkGeometry, ...]
    tip_offset: Pose
    home: JointConfig
    mount: Pose = field(default_factory=Pose.identity)
    kind: str = "arm"
    _origins: np.ndarray = field(init=False, repr=False)
    _axes: np.ndarray = field(init=False, repr=False)
    _lower: np.ndarray = field(init=False, repr=False)
    _upper: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.joints)
        if self.kind == "arm" and not MIN_ARM_JOINTS <= n <= MAX_ARM_JOINTS:
            raise ValueError(f"chain {self.name}: arms need {MIN_ARM_JOINTS}-{MAX_ARM_JOINTS} joints, got {n}")
        if n < 1:
            raise ValueError(f"chain {self.name}: at least one joint required")
        if len(self.links) != n + 1:
            raise ValueError(f"chain {self.name}: expected {n + 1} links, got {len(self.links)}")
        object.__setattr__(self, "_origins", np.stack([j.origin.as_matrix() for j in self.joints]))
        object.__setattr__(self, "_axes", np.stack([j.axis for j in self.joints]))
        object.__setattr__(self, "_lower", np.array([j.limits[0] for j in self.joints]))
        object.__setattr__(self, "_upper", np.array([j.limits[1] for j in self.joints]))
        if len(self.home) != n:
            raise ValueError(f"chain {self.name}: home configuration has wrong length")
        self.check_limits(self.home.angles)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return self._lower

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    def check_limits(self, q: np.ndarray) -> None:
        if q.shape != (self.dof,):
            raise JointLimitError(f"chain {self.name}: expected {self.dof} joint angles, got {q.shape}")
        bad = np.flatnonzero((q < self._lower - _LIMIT_SLACK) | (q > self._upper + _LIMIT_SLACK))
        if bad.size:
            names = ", ".join(self.joints[i].name for i in bad)
            raise JointLimitError(f"chain {self.name}: joints outside limits: {names}")

    def home_pose(self) -> Pose:
        return forward_kinematics(self, self.home).tip


@dataclass(frozen=True, slots=True)
class FKResult:
    tip: Pose
    link_poses: Tuple[Pose, ...]
    joint_poses: Tuple[Pose, ...]


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _fk_matrices(chain: KinematicChain, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (link frames (n+1,4,4), joint frames (n,4,4), tip frame)."""

    n = chain.dof
    links = np.empty((n + 1, 4, 4))
    joints = np.empty((n, 4, 4))
    links[0] = np.eye(4)
    spin = np.eye(4)
    for i in range(n):
        joints[i] = links[i] @ chain._origins[i]
        spin[:3, :3] = _axis_rotation(chain._axes[i], float(q[i]))
        links[i + 1] = joints[i] @ spin
    tip = links[n] @ chain.tip_offset.as_matrix()
    return links, joints, tip


def forward_kinematics(chain: KinematicChain, q: JointConfig | Sequence[float]) -> FKResult:
    """Gripper-tip pose and per-link poses in the chain's base frame."""

    angles = q.angles if isinstance(q, JointConfig) else np.asarray(q, dtype=float)
    chain.check_limits(angles)
    links, joints, tip = _fk_matrices(chain, angles)
    return FKResult(
        tip=Pose.from_matrix(tip),
        link_poses=tuple(Pose.from_matrix(m) for m in links),
        joint_poses=tuple(Pose.from_matrix(m) for m in joints),
    )


def link_frames(chain: KinematicChain, q: JointConfig | Sequence[float]) -> np.ndarray:
    """World-frame 4x4 link matrices (mount applied), for the renderer."""

    angles = q.angles if isinstance(q, JointConfig) else np.asarray(q, dtype=float)
    chain.check_limits(angles)
    links, _, _ = _fk_matrices(chain, angles)
    return chain.mount.as_matrix() @ links


def _pose_error(target: np.ndarray, tip: np.ndarray) -> Tuple[np.ndarray, float, float]:
    dp = target[:3, 3] - tip[:3, 3]
    dr = _SciRotation.from_matrix(target[:3, :3] @ tip[:3, :3].T).as_rotvec()
    return np.concatenate([dp, dr]), float(np.linalg.norm(dp)), float(np.linalg.norm(dr))


def _jacobian(joints: np.ndarray, axes: np.ndarray, tip: np.ndarray) -> np.ndarray:
    z = np.einsum("nij,nj->ni", joints[:, :3, :3], axes)
    p = joints[:, :3, 3]
    jac = np.empty((6, len(axes)))
    jac[:3] = np.cross(z, tip[:3, 3] - p).T
    jac[3:] = z.T
    return jac


@dataclass(slots=True)
class _Attempt:
    q: np.ndarray
    position_error: float
    rotation_error: float
    converged: bool


def _solve_from(chain: KinematicChain, target: np.ndarray, q0: np.ndarray, cfg: IKConfig) -> _Attempt:
    q = q0.copy()
    best: Optional[_Attempt] = None
    damping_sq = cfg.damping ** 2
    for iteration in range(cfg.max_iterations + 1):
        _, joints, tip = _fk_matrices(chain, q)
        err, pos_err, rot_err = _pose_error(target, tip)
        if pos_err <= cfg.position_tolerance and rot_err <= cfg.rotation_tolerance:
            return _Attempt(q, pos_err, rot_err, True)
        if best is None or pos_err + rot_err < best.position_error + best.rotation_error:
            best = _Attempt(q.copy(), pos_err, rot_err, False)
        if iteration == cfg.max_iterations:
            break
        jac = _jacobian(joints, chain._axes, tip)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + damping_sq * np.eye(6), err)
        largest = float(np.max(np.abs(dq)))
        if largest > cfg.max_step:
            dq *= cfg.max_step / largest
        q = np.clip(q + dq, chain.lower, chain.upper)
    assert best is not None
    return best


def restart_configs(chain: KinematicChain, cfg: IKConfig) -> List[np.ndarray]:
    """Deterministic restart seeds, uniform within the joint limits."""

    seeds = []
    for k in range(cfg.restarts):
        stream = derive_stream(SeedPath(cfg.restart_seed).extend("ik-restart", chain.name, k))
        seeds.append(stream.uniform(chain.lower, chain.upper))
    return seeds


def inverse_kinematics(
    chain: KinematicChain,
    target: Pose,
    seed: JointConfig | Sequence[float] | None = None,
    cfg: Optional[IKConfig] = None,
) -> JointConfig:
    """Solve for joint angles placing the gripper tip at ``target`` (base frame).

    The seed is tried first. If it converges its solution is returned as is
    and no restart runs, even though a restart might land nearer the seed;
    set ``cfg.exhaustive`` to try every restart regardless. Among converged
    attempts the one nearest the seed in joint space wins.
    """

    cfg = cfg or IKConfig()
    if seed is None:
        q_seed = chain.home.angles
    else:
        q_seed = seed.angles if isinstance(seed, JointConfig) else np.asarray(seed, dtype=float)
    chain.check_limits(q_seed)
    target_matrix = target.as_matrix()

    first = _solve_from(chain, target_matrix, np.array(q_seed, dtype=float), cfg)
    if first.converged and not cfg.exhaustive:
        return JointConfig(first.q)

    attempts = [first]
    for q0 in restart_configs(chain, cfg):
        attempts.append(_solve_from(chain, target_matrix, q0, cfg))

    converged = [a for a in attempts if a.converged]
    if converged:
        winner = min(converged, key=lambda a: float(np.linalg.norm(a.q - q_seed)))
        return JointConfig(winner.q)

    best = min(attempts, key=lambda a: a.position_error + a.rotation_error)
    logger.debug(
        "IK did not converge",
        extra={"chain": chain.name, "position_residual": best.position_error, "rotation_residual": best.rotation_error},
    )
    raise IKUnreachableError(
        f"chain {chain.name}: target unreachable (residual {best.position_error:.4g} m, {best.rotation_error:.4g} rad)",
        best.position_error,
        best.rotation_error,
        best.q,
    )


def ik_residual(chain: KinematicChain, q: JointConfig, target: Pose) -> Tuple[float, float]:
    """Position (m) and rotation (rad) error of ``FK(q)`` against ``target``."""

    _, _, tip = _fk_matrices(chain, q.angles)
    _, pos_err, rot_err = _pose_error(target.as_matrix(), tip)
    return pos_err, rot_err


def world_to_base(chain: KinematicChain, world_pose: Pose) -> Pose:
    return chain.mount.inverse() @ world_pose


def base_to_world(chain: KinematicChain, base_pose: Pose) -> Pose:
    return chain.mount @ base_pose
