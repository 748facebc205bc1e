import numpy as np
import pytest

from config import RenderConfig, SceneConfig
from services.camera import Camera, CameraIntrinsics, look_at
from services.scene import render_plate


def camera(eye, target, up=(0.0, 0.0, 1.0), size=33):
    return Camera(CameraIntrinsics(size, size, 50.0), look_at(eye, target, up))


def test_overhead_view_sees_checkerboard_table():
    cfg = SceneConfig()
    plate = render_plate(camera((0.05, 0.05, 1.75), (0.05, 0.05, 0.0), up=(1.0, 0.0, 0.0)), cfg)
    assert plate.depth[16, 16] == pytest.approx(1.0, abs=1e-6)
    colours = {tuple(c) for c in plate.rgb.reshape(-1, 3)}
    assert colours == {tuple(cfg.table_colors[0]), tuple(cfg.table_colors[1])}


def test_horizontal_view_hits_wall():
    cfg = SceneConfig()
    plate = render_plate(camera((0.5, 0.0, 1.2), (-5.0, 0.0, 1.2)), cfg)
    assert plate.depth[16, 16] == pytest.approx(0.5 + cfg.wall_distance, abs=1e-6)
    assert tuple(plate.rgb[16, 16]) == tuple(cfg.wall_color)


def test_sky_sits_at_far_plane():
    cfg = SceneConfig()
    render_cfg = RenderConfig(far_plane=4.0)
    plate = render_plate(camera((0.0, 0.0, 1.0), (3.0, 0.0, 4.0)), cfg, render_cfg)
    assert plate.depth[0, 16] == pytest.approx(4.0)
    assert tuple(plate.rgb[0, 16]) == tuple(cfg.sky_color)


def test_plate_is_deterministic(small_camera):
    a, b = render_plate(small_camera), render_plate(small_camera)
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert np.all(a.depth > 0)
