"""Pinhole camera model.

Image convention: origin at the top-left corner, +x right, +y down, pixel
``(row, col)`` has its centre at ``(u, v) = (col + 0.5, row + 0.5)``. The camera
frame looks down +z. ``fx = fy`` is derived from the *vertical* field of view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from services.geometry import Pose, Rotation
from utils.errors import AugmentError

MIN_DEPTH = 1e-6


class BehindCameraError(AugmentError):
    """Raised when projecting a point with camera-frame z <= 1e-6."""


class NonPositiveDepthError(AugmentError):
    """Raised when unprojecting with depth <= 0."""


class DegenerateFrameError(AugmentError):
    """Raised by look_at when eye == target or up is parallel to the view ray."""


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    width: int
    height: int
    fov_deg: float

    def __post_init__(self) -> None:
        if not 10.0 < self.fov_deg < 170.0:
            raise ValueError("vertical field of view must lie in (10, 170) degrees")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def fy(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def fx(self) -> float:
        return self.fy

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "fov_deg": self.fov_deg}

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        return cls(width=int(data["width"]), height=int(data["height"]), fov_deg=float(data["fov_deg"]))


@dataclass(frozen=True, slots=True, eq=False)
class CameraExtrinsics:
    """Camera-to-world pose."""

    pose: Pose

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.pose.inverse().transform_points(points)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CameraExtrinsics) and self.pose == other.pose

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True, eq=False)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Camera)
            and self.intrinsics == other.intrinsics
            and self.extrinsics == other.extrinsics
        )

    __hash__ = None  # type: ignore[assignment]


def project(intr: CameraIntrinsics, extr: CameraExtrinsics, point_world: Sequence[float]) -> Tuple[float, float, float]:
    """World point to ``(u, v, depth)``; depth is the camera-frame z."""

    x, y, z = extr.world_to_camera(np.asarray(point_world, dtype=float))
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"point is behind the camera (z={z:.3g})")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, float(z)


def unproject(intr: CameraIntrinsics, extr: CameraExtrinsics, u: float, v: float, depth: float) -> np.ndarray:
    if depth <= 0:
        raise NonPositiveDepthError(f"depth must be positive, got {depth}")
    point_cam = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
    return extr.pose.transform_point(point_cam)


def pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit z for every pixel centre, (H, W, 3)."""

    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float]) -> CameraExtrinsics:
    """Camera at ``eye`` with +z toward ``target`` and image-down opposite ``up``."""

    eye_v = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye_v
    distance = float(np.linalg.norm(forward))
    if distance <= 1e-6:
        raise DegenerateFrameError("eye and target coincide")
    z_axis = forward / distance
    right = np.cross(z_axis, np.asarray(up, dtype=float))
    norm = float(np.linalg.norm(right))
    if norm <= 1e-9:
        raise DegenerateFrameError("up vector is parallel to the viewing direction")
    x_axis = right / norm
    y_axis = np.cross(z_axis, x_axis)
    rotation = Rotation.from_matrix(np.column_stack([x_axis, y_axis, z_axis]))
    return CameraExtrinsics(Pose(rotation, eye_v))
