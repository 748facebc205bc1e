import copy
from collections import defaultdict

import numpy as np
import pytest
from PIL import Image

from config import PairedConfig
from services.chain_registry import BUILTIN_REGISTRY, parse_registry
from services.camera import project
from services.geometry import Pose
from services.kinematics import base_to_world, forward_kinematics
from services.paired_data import gen_paired
from services.sampler import SeedPath


@pytest.fixture
def twin(arm_a):
    entry = copy.deepcopy(next(c for c in BUILTIN_REGISTRY["chains"] if c["name"] == "arm-A"))
    entry["name"] = "arm-A-twin"
    return parse_registry({"format_version": BUILTIN_REGISTRY["format_version"], "chains": [entry]})["arm-A-twin"]


@pytest.fixture
def paired_settings(settings):
    return settings.model_copy(update={"paired": PairedConfig(cameras_per_pose=2)})


@pytest.fixture
def home_pose(arm_a, monkeypatch):
    world = base_to_world(arm_a, forward_kinematics(arm_a, arm_a.home).tip)
    monkeypatch.setattr("services.paired_data.sample_robot_pose", lambda cfg, stream: world)
    return world


def _by_pair(dataset):
    groups = defaultdict(list)
    for trajectory in dataset.trajectories:
        groups[trajectory.provenance[0]["pair_id"], trajectory.provenance[0]["variant"]].append(trajectory)
    return groups


def test_pairs_share_camera_and_gripper_pose(arm_a, twin, paired_settings, home_pose):
    result = gen_paired([arm_a, twin], 2, paired_settings, SeedPath(0))
    assert result.skipped_poses == []
    assert result.pairs_emitted == 4
    assert len(result.dataset) == 8
    for (pair_id, variant), members in _by_pair(result.dataset).items():
        assert variant == "plain"
        assert {t.robot for t in members} == {"arm-A", "arm-A-twin"}
        first, second = (t.frames[0] for t in members)
        assert first.camera == second.camera
        assert first.gripper_pose.allclose(second.gripper_pose, atol=1e-4)
    assert result.dataset.get("pair-00001-c1-arm-A").task == "paired"


def test_cameras_differ_between_pairs(arm_a, twin, paired_settings, home_pose):
    result = gen_paired([arm_a, twin], 1, paired_settings, SeedPath(1))
    c0 = result.dataset.get("pair-00000-c0-arm-A").frames[0].camera
    c1 = result.dataset.get("pair-00000-c1-arm-A").frames[0].camera
    assert not c0 == c1


def test_unreachable_pose_is_skipped_for_every_robot(arm_a, twin, paired_settings, monkeypatch):
    far = Pose.from_translation(5.0, 5.0, 5.0)
    monkeypatch.setattr("services.paired_data.sample_robot_pose", lambda cfg, stream: far)
    result = gen_paired([arm_a, twin], 2, paired_settings, SeedPath(2))
    assert result.skipped_poses == [0, 1]
    assert result.skipped_pairs == 4
    assert result.pairs_emitted == 0
    assert len(result.dataset) == 0


def test_background_variants(tmp_path, arm_a, twin, paired_settings, home_pose):
    Image.new("RGB", (80, 60), (30, 140, 220)).save(tmp_path / "blue.png")
    result = gen_paired([arm_a, twin], 1, paired_settings, SeedPath(3), backgrounds=tmp_path)
    assert len(result.dataset) == 8
    plain = result.dataset.get("pair-00000-c0-arm-A").frames[0]
    pasted = result.dataset.get("pair-00000-c0-arm-A-bg").frames[0]
    assert pasted.shape == plain.shape
    assert pasted.gripper_pose == plain.gripper_pose
    assert np.all(pasted.rgb == (30, 140, 220), axis=-1).any()


def test_generation_is_seeded(arm_a, twin, paired_settings, home_pose):
    first = gen_paired([arm_a, twin], 1, paired_settings, SeedPath(4)).dataset
    second = gen_paired([arm_a, twin], 1, paired_settings, SeedPath(4)).dataset
    assert first == second


def test_needs_two_robots(arm_a, paired_settings):
    with pytest.raises(ValueError):
        gen_paired([arm_a], 1, paired_settings, SeedPath(0))


def test_paired_tips_project_to_the_same_pixel(arm_a, paired_settings, home_pose):
    entry = copy.deepcopy(next(c for c in BUILTIN_REGISTRY["chains"] if c["name"] == "arm-A"))
    entry["name"] = "arm-A-offset"
    entry["mount_xyz"] = (-0.45, 0.05, 0.75)
    offset = parse_registry({"format_version": BUILTIN_REGISTRY["format_version"], "chains": [entry]})["arm-A-offset"]
    chains = {"arm-A": arm_a, "arm-A-offset": offset}

    result = gen_paired([arm_a, offset], 2, paired_settings, SeedPath(6))
    assert result.pairs_emitted == 4
    for members in _by_pair(result.dataset).values():
        pixels = []
        for trajectory in members:
            frame = trajectory.frames[0]
            tip = base_to_world(chains[trajectory.robot], frame.gripper_pose).translation
            u, v, _ = project(frame.camera.intrinsics, frame.camera.extrinsics, tip)
            pixels.append(np.array([u, v]))
        assert np.linalg.norm(pixels[0] - pixels[1]) <= 2.0
