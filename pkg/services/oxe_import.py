"""Import adapter for a simplified OXE-style episode layout.

Expected layout::

    <root>/episode_*/images/*.png     one RGB image per timestep, sorted by name
    <root>/episode_*/poses.csv        header tx,ty,tz,qw,qx,qy,qz,gripper; base frame
    <root>/episode_*/camera.json      {"fov_deg": f, "extrinsics": [7 numbers]}
    <root>/episode_*/depth/*.npy      optional, metres, one per image
    <root>/episode_*/masks/*.png      optional robot masks

Actions become absolute targets of the next pose. Frames without masks are
flagged so the segmenter falls back to its geometric path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from services.camera import Camera, CameraExtrinsics, CameraIntrinsics
from services.dataset_service import Dataset, DatasetFormatError, Trajectory, new_metadata
from services.geometry import Action, ActionKind, Pose
from services.raster import Frame
from utils.errors import NotFoundError
from utils.logging import get_logger

logger = get_logger(__name__)

POSE_COLUMNS = ("tx", "ty", "tz", "qw", "qx", "qy", "qz", "gripper")


def _read_poses(path: Path) -> np.ndarray:
    try:
        table = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    except (OSError, ValueError) as exc:
        raise DatasetFormatError(f"Unreadable pose table: {path}") from exc
    missing = [c for c in POSE_COLUMNS if c not in (table.dtype.names or ())]
    if missing:
        raise DatasetFormatError(f"Pose table {path} lacks columns: {missing}")
    return np.stack([table[c] for c in POSE_COLUMNS], axis=-1).reshape(-1, len(POSE_COLUMNS))


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def import_episode(directory: Path, robot: str, task: str) -> Trajectory:
    images = sorted((directory / "images").glob("*.png"))
    if not images:
        raise DatasetFormatError(f"No images in {directory / 'images'}")
    rows = _read_poses(directory / "poses.csv")
    if len(rows) != len(images):
        raise DatasetFormatError(f"{directory}: {len(images)} images but {len(rows)} pose rows")
    try:
        camera_doc = json.loads((directory / "camera.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"Unreadable camera file in {directory}") from exc

    depth_files: List[Optional[Path]] = [None] * len(images)
    depth_dir = directory / "depth"
    if depth_dir.is_dir():
        depth_files = [depth_dir / f"{img.stem}.npy" for img in images]
    mask_dir = directory / "masks"
    has_masks = mask_dir.is_dir()

    poses = [Pose.from_array7(row[:7]) for row in rows]
    frames = []
    for j, image_path in enumerate(images):
        rgb = _load_rgb(image_path)
        height, width = rgb.shape[:2]
        camera = Camera(
            CameraIntrinsics(width, height, float(camera_doc["fov_deg"])),
            CameraExtrinsics(Pose.from_array7(camera_doc["extrinsics"])),
        )
        depth_path = depth_files[j]
        depth = np.load(depth_path).astype(np.float32) if depth_path is not None and depth_path.exists() else np.zeros((height, width), np.float32)
        if has_masks and (mask_dir / image_path.name).exists():
            with Image.open(mask_dir / image_path.name) as m:
                mask = np.asarray(m.convert("L")) > 127
            mask_valid = True
        else:
            mask = np.zeros((height, width), dtype=bool)
            mask_valid = False
        gripper = float(np.clip(rows[j][7], 0.0, 1.0))
        target = poses[min(j + 1, len(poses) - 1)]
        frames.append(
            Frame(
                rgb=rgb,
                depth=depth,
                mask=mask,
                camera=camera,
                gripper_pose=poses[j],
                action=Action(ActionKind.ABSOLUTE, target, gripper),
                mask_valid=mask_valid,
            )
        )
    entry = {"stage": "import", "source": str(directory.name)}
    return Trajectory(directory.name, robot, task, tuple(frames), (entry,))


def import_episodes(root: Path, robot: str, task: str, name: Optional[str] = None) -> Dataset:
    root = Path(root)
    episodes = sorted(p for p in root.glob("episode_*") if p.is_dir())
    if not episodes:
        raise NotFoundError(f"No episode_* directories under {root}")
    trajectories = [import_episode(e, robot, task) for e in episodes]
    logger.info("Imported episodes", extra={"root": str(root), "episodes": len(trajectories)})
    return Dataset(name or root.name, tuple(trajectories), new_metadata(kind="imported"))
