import logging
import math

import numpy as np
import pytest
from PIL import Image

from services.camera import Camera, CameraExtrinsics, CameraIntrinsics, look_at
from services.geometry import Pose
from services.kinematics import Capsule, forward_kinematics
from services.raster import (
    BackgroundPlate,
    DepthFormatError,
    DimensionMismatchError,
    EmptyCorpusError,
    Frame,
    brightness_shift,
    composite,
    decode_depth,
    decode_png,
    encode_depth,
    encode_png,
    load_background_corpus,
    montage,
    paste_on_background_corpus,
    rasterize_capsules,
    render,
    zoom_frame,
)
from services.sampler import SeedPath
from services.scene import render_plate


def axis_camera(size: int = 65) -> Camera:
    return Camera(CameraIntrinsics(size, size, 60.0), CameraExtrinsics(Pose.identity()))


def test_capsule_on_axis_has_unit_centre_depth():
    camera = axis_camera()
    capsule = Capsule((-0.1, 0.0, 1.2), (0.1, 0.0, 1.2), 0.2, (200, 10, 10))
    _, zbuf, hit = rasterize_capsules([capsule], camera)
    assert hit[32, 32]
    assert zbuf[32, 32] == pytest.approx(1.0, abs=1e-9)
    assert not hit[0, 0]
    assert math.isinf(zbuf[0, 0])


def test_nearer_capsule_wins():
    camera = axis_camera()
    near = Capsule((-0.1, 0.0, 1.2), (0.1, 0.0, 1.2), 0.2, (250, 0, 0))
    far = Capsule((-0.5, 0.0, 2.0), (0.5, 0.0, 2.0), 0.3, (0, 0, 250))
    for order in ([near, far], [far, near]):
        rgb, zbuf, _ = rasterize_capsules(order, camera)
        assert zbuf[32, 32] == pytest.approx(1.0, abs=1e-9)
        assert rgb[32, 32, 0] > rgb[32, 32, 2]


def test_robot_out_of_view_gives_empty_mask(arm_a):
    camera = Camera(CameraIntrinsics(32, 32, 50.0), look_at((0.5, 0.0, 1.0), (5.0, 0.0, 1.0), (0.0, 0.0, 1.0)))
    frame = render(arm_a, arm_a.home, camera)
    assert not frame.mask.any()
    assert not frame.depth.any()


def test_render_over_plate(arm_a, small_camera):
    plate = render_plate(small_camera)
    frame = render(arm_a, arm_a.home, small_camera, plate=plate)
    assert frame.mask.any()
    assert np.all(frame.depth[frame.mask] > 0)
    assert np.all(frame.depth[frame.mask] < plate.depth[frame.mask])
    np.testing.assert_array_equal(frame.rgb[~frame.mask], plate.rgb[~frame.mask])
    assert frame.gripper_pose == forward_kinematics(arm_a, arm_a.home).tip
    np.testing.assert_array_equal(frame.joint_config.angles, arm_a.home.angles)


def test_render_is_deterministic(arm_a, small_camera):
    assert render(arm_a, arm_a.home, small_camera) == render(arm_a, arm_a.home, small_camera)


def test_brightness_clamps_at_white():
    rgb = np.full((2, 2, 3), 240, dtype=np.uint8)
    assert np.all(brightness_shift(rgb, 30) == 255)
    black = np.zeros((2, 2, 3), dtype=np.uint8)
    assert np.all(brightness_shift(black, -30) == 0)


def test_brightness_shift_round_trip_within_one_level():
    stream = np.random.default_rng(0)
    rgb = stream.integers(30, 200, (16, 16, 3)).astype(np.uint8)
    back = brightness_shift(brightness_shift(rgb, 30), -30)
    assert np.max(np.abs(back.astype(int) - rgb.astype(int))) <= 1


def test_brightness_shift_of_empty_selection():
    empty = np.zeros((0, 3), dtype=np.uint8)
    assert brightness_shift(empty, 10).shape == (0, 3)


def test_composite_with_zero_delta_is_exact(arm_a, small_camera):
    fg = render(arm_a, arm_a.home, small_camera)
    plate = BackgroundPlate(np.full(small_camera.shape + (3,), 17, dtype=np.uint8))
    out = composite(fg, plate, 0)
    np.testing.assert_array_equal(out.rgb[fg.mask], fg.rgb[fg.mask])
    assert np.all(out.rgb[~fg.mask] == 17)
    np.testing.assert_array_equal(out.depth[fg.mask], fg.depth[fg.mask])
    assert out.gripper_pose == fg.gripper_pose


def test_composite_rejects_mismatched_plate(arm_a, small_camera):
    fg = render(arm_a, arm_a.home, small_camera)
    with pytest.raises(DimensionMismatchError):
        composite(fg, BackgroundPlate(np.zeros((8, 8, 3), dtype=np.uint8)), 0)


def test_frame_validates_layers(small_camera):
    h, w = small_camera.shape
    with pytest.raises(DimensionMismatchError):
        Frame(np.zeros((h, w, 3)), np.zeros((h, w + 1)), np.zeros((h, w), bool), small_camera, Pose.identity())
    with pytest.raises(ValueError):
        Frame(np.zeros((h, w, 3)), -np.ones((h, w)), np.zeros((h, w), bool), small_camera, Pose.identity())


def test_depth_blob_round_trip_and_errors():
    depth = np.random.default_rng(1).uniform(0.0, 5.0, (7, 9)).astype(np.float32)
    blob = encode_depth(depth)
    assert blob[:4] == b"DPTH"
    assert decode_depth(blob).tobytes() == depth.tobytes()
    with pytest.raises(DepthFormatError):
        decode_depth(b"XXXX" + blob[4:])
    with pytest.raises(DepthFormatError):
        decode_depth(blob[:-4])


def test_png_round_trip():
    rgb = np.random.default_rng(2).integers(0, 256, (5, 6, 3)).astype(np.uint8)
    np.testing.assert_array_equal(decode_png(encode_png(rgb)), rgb)
    mask = rgb[..., 0] > 128
    np.testing.assert_array_equal(decode_png(encode_png(mask), as_mask=True), mask)


def _write_corpus(directory):
    Image.new("RGB", (40, 30), (10, 200, 30)).save(directory / "b_green.png")
    Image.new("RGB", (30, 40), (200, 10, 30)).save(directory / "a_red.bmp")
    (directory / "c_broken.png").write_bytes(b"not an image")
    (directory / "notes.txt").write_text("ignored")


def test_background_corpus_skips_undecodable(tmp_path, caplog):
    _write_corpus(tmp_path)
    with caplog.at_level(logging.WARNING):
        corpus = load_background_corpus(tmp_path)
    assert [name for name, _ in corpus] == ["a_red.bmp", "b_green.png"]
    assert "undecodable" in caplog.text


def test_empty_corpus_raises(tmp_path):
    (tmp_path / "broken.png").write_bytes(b"nope")
    with pytest.raises(EmptyCorpusError):
        load_background_corpus(tmp_path)


def test_paste_on_corpus_is_seeded(tmp_path, tiny_trajectory):
    _write_corpus(tmp_path)
    frames = tiny_trajectory.frames
    first = paste_on_background_corpus(frames, tmp_path, SeedPath(3), "traj-0", brightness_range=40)
    second = paste_on_background_corpus(frames, tmp_path, SeedPath(3), "traj-0", brightness_range=40)
    assert first == second
    for original, pasted in zip(frames, first):
        background = pasted.rgb[~original.mask]
        assert background.size
        colours = {tuple(c) for c in background.reshape(-1, 3)}
        assert colours <= {(10, 200, 30), (200, 10, 30)}
        assert pasted.action == original.action


def test_zoom_updates_field_of_view(small_camera):
    h, w = small_camera.shape
    mask = np.zeros((h, w), dtype=bool)
    mask[h // 2 - 5:h // 2 + 5, w // 2 - 5:w // 2 + 5] = True
    rgb = np.repeat(np.where(mask, 200, 20).astype(np.uint8)[..., None], 3, axis=-1)
    frame = Frame(rgb, np.where(mask, 1.0, 3.0), mask, small_camera, Pose.identity())

    zoomed = zoom_frame(frame, 2.0)
    fov = frame.camera.intrinsics.fov_deg
    expected = math.degrees(2.0 * math.atan(math.tan(math.radians(fov) / 2.0) / 2.0))
    assert zoomed.camera.intrinsics.fov_deg == pytest.approx(expected)
    assert zoomed.shape == frame.shape
    assert zoomed.camera.extrinsics == frame.camera.extrinsics
    assert 300 <= zoomed.mask.sum() <= 500
    assert zoomed.depth[h // 2, w // 2] == 1.0
    with pytest.raises(ValueError):
        zoom_frame(frame, 0.0)


def test_montage_layout():
    images = [np.full((4, 5, 3), v, dtype=np.uint8) for v in (10, 20, 30)]
    sheet = montage(images, columns=2, gap=2)
    assert sheet.shape == (10, 12, 3)
    assert tuple(sheet[0, 0]) == (10, 10, 10)
    assert tuple(sheet[6, 0]) == (30, 30, 30)
    assert tuple(sheet[9, 11]) == (255, 255, 255)


def test_closer_camera_sees_more_robot_pixels(arm_a):
    target = np.array([-0.2, 0.0, 1.0])
    direction = np.array([1.0, 0.6, 0.4]) / np.linalg.norm([1.0, 0.6, 0.4])
    counts = []
    for distance in (2.0, 2.5, 3.0, 3.5):
        eye = target + distance * direction
        camera = Camera(CameraIntrinsics(64, 64, 55.0), look_at(tuple(eye), tuple(target), (0.0, 0.0, 1.0)))
        frame = render(arm_a, arm_a.home, camera)
        assert not frame.mask[0, :].any() and not frame.mask[-1, :].any()
        assert not frame.mask[:, 0].any() and not frame.mask[:, -1].any()
        counts.append(int(frame.mask.sum()))
    assert counts[-1] > 0
    assert all(near > far for near, far in zip(counts, counts[1:]))


@pytest.mark.slow
def test_zero_brightness_shift_is_stable_over_the_colour_cube():
    levels = np.arange(0, 256, 3, dtype=np.uint8)
    r, g, b = np.meshgrid(levels, levels, levels, indexing="ij")
    rgb = np.stack([r, g, b], axis=-1).reshape(-1, 1, 3)
    shifted = brightness_shift(rgb, 0)
    assert np.max(np.abs(shifted.astype(int) - rgb.astype(int))) <= 1


@pytest.mark.slow
def test_background_choice_is_uniform_over_the_corpus(tmp_path):
    from scipy.stats import chisquare

    corpus_size = 100
    for k in range(corpus_size):
        Image.new("RGB", (4, 4), (k, 255 - k, 7)).save(tmp_path / f"bg_{k:03d}.png")
    camera = axis_camera(2)
    blank = Frame(
        np.zeros((2, 2, 3), dtype=np.uint8),
        np.zeros((2, 2), dtype=np.float32),
        np.zeros((2, 2), dtype=bool),
        camera,
        Pose.identity(),
    )
    pasted = paste_on_background_corpus([blank] * 10_000, tmp_path, SeedPath(17), "traj-0")
    choices = np.array([int(frame.rgb[0, 0, 0]) for frame in pasted])
    np.testing.assert_array_equal([frame.rgb[0, 0, 1] for frame in pasted], 255 - choices)
    observed = np.bincount(choices, minlength=corpus_size)
    assert chisquare(observed).pvalue > 0.01
