import json

import numpy as np
import pytest
from PIL import Image

from app import EXIT_FAILURE, EXIT_OK, EXIT_PARTIAL, main
from services.dataset_service import dataset_digest, read_dataset


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"image_width": 48, "image_height": 48, "master_seed": 5}))
    return str(path)


@pytest.fixture
def demos(tmp_path, small_config):
    out = tmp_path / "demos"
    argv = ["gen-demos", "--robot", "arm-A", "--task", "pick", "--count", "1", "--frames", "3"]
    assert main([*argv, "--out", str(out), "--config", small_config]) == EXIT_OK
    return out


def test_gen_demos_writes_dataset_and_report(demos):
    assert (demos / "manifest.json").is_file()
    report = json.loads((demos / "run_report.json").read_text())
    assert report["command"] == "gen-demos"
    assert report["trajectories"] == [{"id": "pick-arm-A-0000", "status": "ok", "frames": 3}]
    assert report["config"]["master_seed"] == 5
    assert "write" in report["timings"]


def test_stats_prints_json(demos, small_config, capsys):
    capsys.readouterr()
    assert main(["stats", "--in", str(demos), "--config", small_config]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["frames"] == 3
    assert summary["cells"][0]["robot"] == "arm-A"


def test_preview_writes_contact_sheet(demos, tmp_path, small_config):
    out = tmp_path / "sheet.png"
    argv = ["preview", "--in", str(demos), "--traj", "pick-arm-A-0000", "--out", str(out), "--masks"]
    assert main([*argv, "--config", small_config]) == EXIT_OK
    with Image.open(out) as sheet:
        assert sheet.size == (3 * 48 + 2 * 2, 2 * 48 + 2)


def test_preview_of_missing_trajectory_fails(demos, tmp_path, small_config):
    argv = ["preview", "--in", str(demos), "--traj", "nope", "--out", str(tmp_path / "x.png")]
    assert main([*argv, "--config", small_config]) == EXIT_FAILURE


def test_self_ro_aug_round_trips_frames(demos, tmp_path, small_config):
    out = tmp_path / "self"
    argv = ["ro-aug", "--in", str(demos), "--source", "arm-A", "--target", "arm-A", "--no-brightness", "--strict"]
    assert main([*argv, "--out", str(out), "--config", small_config]) == EXIT_OK
    original = read_dataset(demos).trajectories[0]
    swapped = read_dataset(out).trajectories[0]
    assert all(a == b for a, b in zip(swapped.frames, original.frames))
    assert swapped.provenance[-1]["run_config"]["roaug"]["brightness_range"] == 0
    report = json.loads((out / "run_report.json").read_text())
    assert report["trajectories"] == [
        {
            "id": "pick-arm-A-0000", "status": "ok", "stage": "ro-aug",
            "source": "arm-A", "target": "arm-A", "frames": 3, "succeeded": 3, "failed": 0,
        }
    ]
    assert report["failures"] == []


def test_vi_aug_reports_mode(demos, tmp_path, small_config):
    out = tmp_path / "views"
    argv = ["vi-aug", "--in", str(demos), "--mode", "consistent", "--out", str(out)]
    assert main([*argv, "--config", small_config]) == EXIT_OK
    report = json.loads((out / "run_report.json").read_text())
    assert report["trajectories"][0]["mode"] == "consistent"
    assert report["trajectories"][0]["distinct_perturbations"] == 1


def test_rovi_aug_records_both_stages_in_order(demos, tmp_path, small_config):
    out = tmp_path / "rovi"
    argv = ["rovi-aug", "--in", str(demos), "--source", "arm-A", "--target", "arm-A", "--mode", "consistent"]
    assert main([*argv, "--out", str(out), "--config", small_config]) == EXIT_OK
    original = read_dataset(demos).trajectories[0]
    augmented = read_dataset(out).trajectories[0]
    stages = [entry["stage"] for entry in augmented.provenance]
    assert stages[-2:] == ["ro-aug:arm-A->arm-A", "vi-aug:consistent"]
    assert len(augmented.frames) == len(original.frames)
    for produced, recorded in zip(augmented.frames, original.frames):
        assert produced.gripper_pose == recorded.gripper_pose
        assert produced.action == recorded.action


def test_align_round_trip_through_cli(demos, tmp_path, small_config):
    moved = tmp_path / "moved"
    argv = ["align", "--in", str(demos), "--transform", "0,0,-0.75,1,0,0,0", "--out", str(moved)]
    assert main([*argv, "--config", small_config]) == EXIT_OK
    a = read_dataset(demos).trajectories[0].frames[0].gripper_pose.translation
    b = read_dataset(moved).trajectories[0].frames[0].gripper_pose.translation
    np.testing.assert_allclose(b, a + [0.0, 0.0, -0.75], atol=1e-12)


def test_gen_paired_skips_are_partial_only_when_strict(tmp_path, small_config, monkeypatch):
    from services.geometry import Pose

    monkeypatch.setattr(
        "services.paired_data.sample_robot_pose", lambda cfg, stream: Pose.from_translation(5.0, 5.0, 5.0)
    )
    argv = ["gen-paired", "--robots", "arm-A,arm-B", "--count", "1", "--config", small_config]
    assert main([*argv, "--out", str(tmp_path / "lenient")]) == EXIT_OK
    assert main([*argv, "--out", str(tmp_path / "strict"), "--strict"]) == EXIT_PARTIAL
    report = json.loads((tmp_path / "strict" / "run_report.json").read_text())
    assert report["failures"][0]["trajectory"] == "pair-00000"


@pytest.mark.parametrize(
    "argv",
    [
        ["teleport"],
        ["stats"],
        ["bench", "--stage", "inpaint", "--frames", "0"],
        ["bench", "--stage", "warp", "--frames", "1"],
        ["align", "--in", "x", "--transform", "1,2,3", "--out", "y"],
        ["compose", "--inputs", "a,b,c", "--out", "d"],
        ["stats", "--in", "missing-dataset"],
        ["stats", "--in", "x", "--workers", "0"],
    ],
)
def test_bad_invocations_exit_one(argv, small_config):
    assert main(argv) == EXIT_FAILURE


def test_worker_count_does_not_change_output(tmp_path, small_config):
    argv = ["gen-demos", "--robot", "arm-A", "--task", "pick", "--count", "2", "--frames", "2", "--config", small_config]
    assert main([*argv, "--out", str(tmp_path / "one" / "ds"), "--workers", "1"]) == EXIT_OK
    assert main([*argv, "--out", str(tmp_path / "two" / "ds"), "--workers", "2", "--backend", "threading"]) == EXIT_OK
    assert dataset_digest(tmp_path / "one" / "ds") == dataset_digest(tmp_path / "two" / "ds")


def _run_full_pipeline(directory, config, parallel):
    directory.mkdir()
    steps = [
        ["gen-paired", "--robots", "arm-A,arm-B", "--count", "1", "--out", "paired"],
        ["gen-demos", "--robot", "arm-A", "--task", "lift", "--count", "1", "--frames", "2", "--out", "d1_s"],
        ["gen-demos", "--robot", "arm-B", "--task", "stack", "--count", "1", "--frames", "2", "--out", "d2_t"],
        ["ro-aug", "--in", "d2_t", "--source", "arm-B", "--target", "arm-A", "--out", "d2_t_to_s"],
        ["ro-aug", "--in", "d1_s", "--source", "arm-A", "--target", "arm-B", "--out", "d1_s_to_t"],
        ["vi-aug", "--in", "d1_s_to_t", "--mode", "inconsistent", "--out", "d1_s_to_t_views"],
        ["compose", "--inputs", "d1_s,d2_t,d2_t_to_s,d1_s_to_t", "--out", "composed"],
    ]
    with pytest.MonkeyPatch.context() as patch:
        patch.chdir(directory)
        for argv in steps:
            assert main([*argv, "--config", config, *parallel]) == EXIT_OK, argv[0]
    names = ["paired", "d1_s", "d2_t", "d2_t_to_s", "d1_s_to_t", "d1_s_to_t_views", "composed"]
    return {name: dataset_digest(directory / name) for name in names}


def test_full_pipeline_is_identical_across_worker_counts(tmp_path, small_config):
    serial = _run_full_pipeline(tmp_path / "serial", small_config, ["--workers", "1"])
    threaded = _run_full_pipeline(tmp_path / "threaded", small_config, ["--workers", "8", "--backend", "threading"])
    assert serial == threaded
