import json

import numpy as np
import pytest
from PIL import Image

from services.dataset_service import DatasetFormatError
from services.oxe_import import import_episodes
from utils.errors import NotFoundError

HEADER = "tx,ty,tz,qw,qx,qy,qz,gripper"
ROWS = ["0.1,0.0,0.5,1,0,0,0,1", "0.2,0.0,0.5,1,0,0,0,0.5", "0.3,0.0,0.5,1,0,0,0,0"]


def make_episode(root, name="episode_000", rows=ROWS, header=HEADER, masks=False, depth=False):
    episode = root / name
    (episode / "images").mkdir(parents=True)
    for j in range(len(rows)):
        Image.new("RGB", (8, 6), (10 * j, 20, 30)).save(episode / "images" / f"{j:04d}.png")
        if masks:
            (episode / "masks").mkdir(exist_ok=True)
            Image.new("L", (8, 6), 255 if j == 0 else 0).save(episode / "masks" / f"{j:04d}.png")
        if depth:
            (episode / "depth").mkdir(exist_ok=True)
            np.save(episode / "depth" / f"{j:04d}.npy", np.full((6, 8), 1.5))
    (episode / "poses.csv").write_text("\n".join([header, *rows]) + "\n")
    (episode / "camera.json").write_text(json.dumps({"fov_deg": 50.0, "extrinsics": [0, 0, 1, 1, 0, 0, 0]}))
    return episode


def test_import_without_masks_flags_frames(tmp_path):
    make_episode(tmp_path)
    ds = import_episodes(tmp_path, "arm-A", "push")
    trajectory = ds.get("episode_000")
    assert trajectory.robot == "arm-A" and trajectory.task == "push"
    assert len(trajectory.frames) == 3
    assert all(not f.mask_valid for f in trajectory.frames)
    assert all(not f.depth.any() for f in trajectory.frames)
    assert tuple(trajectory.frames[2].rgb[0, 0]) == (20, 20, 30)


def test_actions_follow_the_next_pose(tmp_path):
    make_episode(tmp_path)
    frames = import_episodes(tmp_path, "arm-A", "push").trajectories[0].frames
    np.testing.assert_array_equal(frames[0].action.pose.translation, [0.2, 0.0, 0.5])
    assert [f.action.gripper for f in frames] == [1.0, 0.5, 0.0]
    assert frames[2].action.pose == frames[2].gripper_pose


def test_masks_and_depth_are_used(tmp_path):
    make_episode(tmp_path, masks=True, depth=True)
    frames = import_episodes(tmp_path, "arm-B", "push").trajectories[0].frames
    assert all(f.mask_valid for f in frames)
    assert frames[0].mask.all() and not frames[1].mask.any()
    assert np.all(frames[0].depth == np.float32(1.5))


def test_missing_column_rejected(tmp_path):
    make_episode(tmp_path, header="tx,ty,tz,qw,qx,qy,qz", rows=[r.rsplit(",", 1)[0] for r in ROWS])
    with pytest.raises(DatasetFormatError):
        import_episodes(tmp_path, "arm-A", "push")


def test_row_count_mismatch_rejected(tmp_path):
    episode = make_episode(tmp_path)
    (episode / "images" / "0002.png").unlink()
    with pytest.raises(DatasetFormatError):
        import_episodes(tmp_path, "arm-A", "push")


def test_no_episodes(tmp_path):
    with pytest.raises(NotFoundError):
        import_episodes(tmp_path, "arm-A", "push")
