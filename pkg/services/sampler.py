"""Every stochastic draw the engine makes, plus deterministic stream derivation.

Streams are counter-based: a ``SeedPath`` (master seed plus an ordered list of
``(stage_id, trajectory_id, frame_index)`` components) is hashed with BLAKE2b
into a 128-bit Philox key. Identical paths give identical streams no matter
which worker draws them or in what order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from config import CameraSamplerConfig, RobotPoseSamplerConfig, ViAugConfig
from services.camera import CameraExtrinsics, CameraIntrinsics, DegenerateFrameError, look_at
from services.geometry import Pose, RigidTransform, Rotation
from utils.errors import AugmentError

_MAX_REJECTIONS = 100_000
_WORLD_UP = (0.0, 0.0, 1.0)


class SamplingError(AugmentError):
    """Raised when rejection sampling cannot satisfy its acceptance region."""


@dataclass(frozen=True, slots=True)
class SeedPath:
    master_seed: int
    path: Tuple[Tuple[str, str, int], ...] = ()

    def extend(self, stage_id: str, trajectory_id: str, frame_index: int) -> "SeedPath":
        return SeedPath(self.master_seed, self.path + ((str(stage_id), str(trajectory_id), int(frame_index)),))

    def key(self) -> int:
        payload = json.dumps([self.master_seed % 2**64, [list(c) for c in self.path]], separators=(",", ":"))
        digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=16).digest()
        return int.from_bytes(digest, "little")

    def to_list(self) -> list:
        return [self.master_seed, [list(c) for c in self.path]]

    @classmethod
    def from_list(cls, data: Sequence) -> "SeedPath":
        master, components = data
        return cls(int(master), tuple((str(s), str(t), int(f)) for s, t, f in components))


def derive_stream(seed_path: SeedPath) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed_path.key()))


def _rejection(draw: Callable[[], float], accept: Callable[[float], bool]) -> float:
    for _ in range(_MAX_REJECTIONS):
        value = draw()
        if accept(value):
            return value
    raise SamplingError("rejection sampling exhausted its draw budget")


def _normal_in(stream: np.random.Generator, mean: float, std: float, accept: Callable[[float], bool]) -> float:
    if std == 0:
        if not accept(mean):
            raise SamplingError(f"fixed value {mean} lies outside the acceptance region")
        return float(mean)
    return float(_rejection(lambda: stream.normal(mean, std), accept))


def _direction(zenith: float, azimuth: float) -> np.ndarray:
    return np.array(
        [math.sin(zenith) * math.cos(azimuth), math.sin(zenith) * math.sin(azimuth), math.cos(zenith)]
    )


def _frame_about(z_axis: np.ndarray, roll: float) -> Rotation:
    """Rotation whose third column is ``z_axis``, spun by ``roll`` about it."""

    helper = np.array([1.0, 0.0, 0.0]) if abs(z_axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x0 = helper - helper.dot(z_axis) * z_axis
    x0 /= np.linalg.norm(x0)
    y0 = np.cross(z_axis, x0)
    x_axis = math.cos(roll) * x0 + math.sin(roll) * y0
    y_axis = np.cross(z_axis, x_axis)
    return Rotation.from_matrix(np.column_stack([x_axis, y_axis, z_axis]))


def sample_robot_pose(cfg: RobotPoseSamplerConfig, stream: np.random.Generator) -> Pose:
    """Gripper target: uniform box translation, downward-biased approach axis."""

    translation = stream.uniform(np.asarray(cfg.box_lo), np.asarray(cfg.box_hi))
    zenith = _normal_in(stream, cfg.zenith_mean, cfg.zenith_std, lambda t: 0.0 <= t <= math.pi)
    azimuth = stream.uniform(0.0, 2.0 * math.pi)
    roll = stream.uniform(0.0, 2.0 * math.pi) if cfg.sample_roll else 0.0
    return Pose(_frame_about(_direction(zenith, azimuth), roll), translation)


def sample_camera(
    cfg: CameraSamplerConfig,
    gripper_position: Sequence[float],
    stream: np.random.Generator,
    width: int = 256,
    height: int = 256,
) -> Tuple[CameraExtrinsics, CameraIntrinsics]:
    """Camera on a hemisphere around the gripper, looking at it, with pose noise."""

    center = np.asarray(gripper_position, dtype=float)
    if cfg.anchor_fraction > 0 and stream.random() < cfg.anchor_fraction:
        anchor = cfg.anchors[int(stream.integers(len(cfg.anchors)))]
        radius, zenith, azimuth = anchor.radius, anchor.zenith, anchor.azimuth
    else:
        radius = _normal_in(stream, cfg.radius_mean, cfg.radius_std, lambda r: r > cfg.min_radius)
        zenith = _normal_in(stream, cfg.zenith_mean, cfg.zenith_std, lambda t: 0.0 <= t <= cfg.zenith_max)
        azimuth = stream.uniform(-cfg.azimuth_half_range, cfg.azimuth_half_range)
    fov = stream.uniform(*cfg.fov_range)

    eye = center + radius * _direction(zenith, azimuth)
    try:
        extrinsics = look_at(eye, center, _WORLD_UP)
    except DegenerateFrameError:
        # Straight overhead: any horizontal hint works.
        extrinsics = look_at(eye, center, (math.cos(azimuth), math.sin(azimuth), 0.0))

    t_noise = stream.uniform(-cfg.translation_noise, cfg.translation_noise, 3)
    r_noise = stream.uniform(-cfg.rotation_noise, cfg.rotation_noise, 3)
    noise = Pose(Rotation.from_euler(*r_noise), t_noise)
    return CameraExtrinsics(extrinsics.pose @ noise), CameraIntrinsics(width, height, float(fov))


@dataclass(frozen=True, slots=True)
class ViewPerturbation:
    """Sampled camera-frame perturbation with the raw box parameters kept."""

    translation: Tuple[float, float, float]
    euler: Tuple[float, float, float]

    @property
    def transform(self) -> RigidTransform:
        return Pose(Rotation.from_euler(*self.euler), np.asarray(self.translation))

    def to_list(self) -> list:
        return list(self.translation) + list(self.euler)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "ViewPerturbation":
        v = [float(x) for x in values]
        return cls(tuple(v[:3]), tuple(v[3:6]))  # type: ignore[arg-type]


def sample_view_parameters(cfg: ViAugConfig, stream: np.random.Generator) -> ViewPerturbation:
    half = np.array([cfg.tx_range, cfg.ty_range, cfg.tz_range])
    translation = stream.uniform(-half, half)
    euler = stream.uniform(-cfg.euler_range, cfg.euler_range, 3)
    return ViewPerturbation(
        tuple(float(x) for x in translation),  # type: ignore[arg-type]
        tuple(float(x) for x in euler),  # type: ignore[arg-type]
    )


def sample_view_perturbation(cfg: ViAugConfig, stream: np.random.Generator) -> RigidTransform:
    return sample_view_parameters(cfg, stream).transform


def sample_brightness_delta(value_range: int, stream: np.random.Generator) -> int:
    if value_range < 0:
        raise ValueError("brightness range must be nonnegative")
    return int(stream.integers(-value_range, value_range, endpoint=True))


def sample_zoom_factor(zoom_range: Tuple[float, float], stream: np.random.Generator) -> float:
    lo, hi = zoom_range
    if not 0 < lo <= hi:
        raise ValueError("zoom range must satisfy 0 < lo <= hi")
    return float(stream.uniform(lo, hi))
