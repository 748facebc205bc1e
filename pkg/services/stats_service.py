"""Summary statistics over a dataset."""

from typing import Any, Dict, List

import numpy as np
from skimage.color import rgb2hsv

from services.dataset_service import Dataset

BRIGHTNESS_BINS = 16


def stats(ds: Dataset) -> Dict[str, Any]:
    """Counts per (robot, task), gripper bounding box, camera spread and brightness histogram."""

    cells: Dict[str, Dict[str, Any]] = {}
    gripper_positions: List[np.ndarray] = []
    camera_positions: List[np.ndarray] = []
    brightness: List[float] = []

    for trajectory in ds.trajectories:
        key = f"{trajectory.robot}|{trajectory.task}"
        cell = cells.setdefault(key, {"robot": trajectory.robot, "task": trajectory.task, "trajectories": 0, "frames": 0})
        cell["trajectories"] += 1
        cell["frames"] += len(trajectory.frames)
        for frame in trajectory.frames:
            gripper_positions.append(frame.gripper_pose.translation)
            camera_positions.append(frame.camera.extrinsics.pose.translation)
            brightness.append(float(rgb2hsv(frame.rgb)[..., 2].mean()))

    summary: Dict[str, Any] = {
        "name": ds.name,
        "trajectories": len(ds),
        "frames": sum(c["frames"] for c in cells.values()),
        "cells": [cells[k] for k in sorted(cells)],
        "gripper_bbox": None,
        "camera_translation_std": None,
        "brightness_histogram": {"bins": BRIGHTNESS_BINS, "range": [0.0, 1.0], "counts": [0] * BRIGHTNESS_BINS},
    }
    if gripper_positions:
        grip = np.stack(gripper_positions)
        summary["gripper_bbox"] = {"min": grip.min(axis=0).tolist(), "max": grip.max(axis=0).tolist()}
        cams = np.stack(camera_positions)
        summary["camera_translation_std"] = cams.std(axis=0).tolist()
        counts, _ = np.histogram(brightness, bins=BRIGHTNESS_BINS, range=(0.0, 1.0))
        summary["brightness_histogram"]["counts"] = counts.tolist()
    return summary
