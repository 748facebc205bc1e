import numpy as np

from config import ViAugConfig, ViewMode
from services.dataset_service import Dataset
from services.sampler import SeedPath
from services.stats_service import BRIGHTNESS_BINS, stats
from services.viaug import vi_aug


def test_single_cell_summary(tiny_dataset):
    summary = stats(tiny_dataset)
    assert summary["name"] == "tiny"
    assert summary["trajectories"] == 1
    assert summary["frames"] == 3
    assert summary["cells"] == [{"robot": "arm-A", "task": "pick", "trajectories": 1, "frames": 3}]
    assert sum(summary["brightness_histogram"]["counts"]) == 3
    assert len(summary["brightness_histogram"]["counts"]) == BRIGHTNESS_BINS


def test_gripper_bbox_and_fixed_camera(tiny_dataset):
    summary = stats(tiny_dataset)
    positions = np.stack([f.gripper_pose.translation for f in tiny_dataset.trajectories[0].frames])
    np.testing.assert_allclose(summary["gripper_bbox"]["min"], positions.min(axis=0))
    np.testing.assert_allclose(summary["gripper_bbox"]["max"], positions.max(axis=0))
    np.testing.assert_allclose(summary["camera_translation_std"], 0.0, atol=1e-12)


def test_empty_dataset():
    summary = stats(Dataset("empty", ()))
    assert summary["frames"] == 0
    assert summary["cells"] == []
    assert summary["gripper_bbox"] is None


def test_viewpoint_augmentation_spreads_cameras(tiny_dataset):
    trajectory = tiny_dataset.trajectories[0]
    moved, _ = vi_aug(trajectory, ViAugConfig(mode=ViewMode.INCONSISTENT), SeedPath(4))
    before = np.asarray(stats(tiny_dataset)["camera_translation_std"])
    after = np.asarray(stats(tiny_dataset.with_trajectories([moved]))["camera_translation_std"])
    assert np.all(after >= before)
    assert after.sum() > before.sum() + 1e-3
    assert stats(tiny_dataset.with_trajectories([moved]))["frames"] == 3
