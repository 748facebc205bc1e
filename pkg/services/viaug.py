"""Viewpoint augmentation by depth-based forward warping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Tuple, runtime_checkable

import numpy as np
from scipy import ndimage

from config import ViAugConfig, ViewMode
from services.camera import Camera, CameraExtrinsics
from services.dataset_service import Trajectory
from services.geometry import RigidTransform
from services.raster import Frame
from services.sampler import SeedPath, ViewPerturbation, derive_stream, sample_view_parameters
from utils.errors import AugmentError
from utils.logging import get_logger
from workers.frame_pool import run_parallel

logger = get_logger(__name__)

# Frame index used for the single trajectory-level draw in consistent mode.
TRAJECTORY_LEVEL = -1


class NoValidDepthError(AugmentError):
    """Raised when a frame has no pixel with positive depth to warp."""


@dataclass(frozen=True, slots=True, eq=False)
class HoleMap:
    """Pixels of a synthesized view that no source pixel reached."""

    holes: np.ndarray

    @property
    def fraction(self) -> float:
        return float(self.holes.mean()) if self.holes.size else 0.0


@runtime_checkable
class ViewSynthesizer(Protocol):
    def synthesize(self, frame: Frame, perturbation: RigidTransform) -> Frame: ...


def reproject(frame: Frame, perturbation: RigidTransform, fill_holes: bool = True) -> Tuple[Frame, HoleMap]:
    """Forward-warp ``frame`` into the camera moved by ``perturbation``.

    The perturbation acts in the camera frame: the new camera-to-world pose is
    ``extr @ perturbation``. Collisions keep the nearest point.
    """

    valid = frame.depth > 0
    if not valid.any():
        raise NoValidDepthError("frame has no valid depth to reproject")

    intr = frame.camera.intrinsics
    height, width = frame.shape
    rows, cols = np.nonzero(valid)
    depth = frame.depth[rows, cols].astype(float)
    points = np.stack(
        [(cols + 0.5 - intr.cx) * depth / intr.fx, (rows + 0.5 - intr.cy) * depth / intr.fy, depth],
        axis=-1,
    )
    moved = perturbation.inverse().transform_points(points)
    z = moved[:, 2]
    front = z > 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * moved[:, 0] / z + intr.cx
        v = intr.fy * moved[:, 1] / z + intr.cy
    front &= np.isfinite(u) & np.isfinite(v)
    new_cols = np.floor(np.where(front, u, -1.0)).astype(np.int64)
    new_rows = np.floor(np.where(front, v, -1.0)).astype(np.int64)
    inside = front & (new_cols >= 0) & (new_cols < width) & (new_rows >= 0) & (new_rows < height)

    src = np.flatnonzero(inside)
    target = new_rows[src] * width + new_cols[src]
    order = np.lexsort((z[src], target))
    winners_sorted, first = np.unique(target[order], return_index=True)
    winners = src[order[first]]

    rgb = np.zeros((height * width, 3), dtype=np.uint8)
    out_depth = np.zeros(height * width, dtype=np.float32)
    mask = np.zeros(height * width, dtype=bool)
    rgb[winners_sorted] = frame.rgb[rows[winners], cols[winners]]
    out_depth[winners_sorted] = z[winners].astype(np.float32)
    mask[winners_sorted] = frame.mask[rows[winners], cols[winners]]

    holes = np.ones(height * width, dtype=bool)
    holes[winners_sorted] = False
    rgb = rgb.reshape(height, width, 3)
    out_depth = out_depth.reshape(height, width)
    mask = mask.reshape(height, width)
    holes = holes.reshape(height, width)

    if fill_holes and holes.any() and not holes.all():
        _, (near_r, near_c) = ndimage.distance_transform_edt(holes, return_indices=True)
        rgb[holes] = rgb[near_r[holes], near_c[holes]]
        mask[holes] = mask[near_r[holes], near_c[holes]]

    camera = Camera(intr, CameraExtrinsics(frame.camera.extrinsics.pose @ perturbation))
    return frame.replace(rgb=rgb, depth=out_depth, mask=mask, camera=camera), HoleMap(holes)


class ReprojectionSynthesizer:
    def __init__(self, fill_holes: bool = True):
        self.fill_holes = fill_holes

    def synthesize(self, frame: Frame, perturbation: RigidTransform) -> Frame:
        warped, _ = reproject(frame, perturbation, self.fill_holes)
        return warped


@dataclass(slots=True)
class ViAugReport:
    trajectory_id: str
    mode: ViewMode
    perturbations: List[ViewPerturbation] = field(default_factory=list)

    @property
    def distinct(self) -> int:
        return len({tuple(p.to_list()) for p in self.perturbations})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "mode": self.mode.value,
            "distinct_perturbations": self.distinct,
            "perturbations": [p.to_list() for p in self.perturbations],
        }


def perturbations_for(traj: Trajectory, cfg: ViAugConfig, seed_path: SeedPath) -> List[ViewPerturbation]:
    """One draw per frame, or a single trajectory-level draw shared by all frames."""

    if cfg.mode is ViewMode.CONSISTENT:
        shared = sample_view_parameters(cfg, derive_stream(seed_path.extend("vi-aug", traj.id, TRAJECTORY_LEVEL)))
        return [shared] * len(traj.frames)
    return [
        sample_view_parameters(cfg, derive_stream(seed_path.extend("vi-aug", traj.id, j)))
        for j in range(len(traj.frames))
    ]


def vi_aug(
    traj: Trajectory,
    cfg: ViAugConfig,
    seed_path: SeedPath,
    synthesizer: Optional[ViewSynthesizer] = None,
    workers: Optional[int] = None,
    provenance_extra: Optional[Dict[str, Any]] = None,
) -> Tuple[Trajectory, ViAugReport]:
    """Re-render every frame from a perturbed camera; poses and actions are kept."""

    synthesizer = synthesizer or ReprojectionSynthesizer(cfg.fill_holes)
    perturbations = perturbations_for(traj, cfg, seed_path)

    def synthesize(j: int) -> Frame:
        original = traj.frames[j]
        warped = synthesizer.synthesize(original, perturbations[j].transform)
        return warped.replace(gripper_pose=original.gripper_pose, action=original.action)

    frames = run_parallel(synthesize, range(len(traj.frames)), workers=workers)
    report = ViAugReport(traj.id, cfg.mode, perturbations)
    entry: Dict[str, Any] = {
        "stage": f"vi-aug:{cfg.mode.value}",
        "config": cfg.model_dump(mode="json"),
        "seed_path": seed_path.to_list(),
        "perturbations": [p.to_list() for p in perturbations],
    }
    if provenance_extra:
        entry.update(provenance_extra)
    logger.info(
        "Vi-Aug trajectory done",
        extra={"trajectory": traj.id, "mode": cfg.mode.value, "distinct": report.distinct},
    )
    return traj.with_frames(frames).with_provenance(entry), report
