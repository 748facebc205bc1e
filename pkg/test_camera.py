import math

import numpy as np
import pytest

from services.camera import (
    BehindCameraError,
    CameraExtrinsics,
    CameraIntrinsics,
    DegenerateFrameError,
    NonPositiveDepthError,
    look_at,
    pixel_rays,
    project,
    unproject,
)
from services.geometry import Pose


def test_focal_length_from_vertical_fov():
    intr = CameraIntrinsics(256, 256, 90.0)
    assert intr.fy == pytest.approx(128.0)
    assert intr.fx == intr.fy
    assert (intr.cx, intr.cy) == (128.0, 128.0)


@pytest.mark.parametrize("fov", [5.0, 10.0, 170.0, 200.0])
def test_fov_outside_range_rejected(fov):
    with pytest.raises(ValueError):
        CameraIntrinsics(64, 64, fov)


def test_project_unproject_round_trip():
    intr = CameraIntrinsics(320, 240, 60.0)
    extr = look_at((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    point = np.array([0.1, -0.2, 0.05])
    u, v, depth = project(intr, extr, point)
    np.testing.assert_allclose(unproject(intr, extr, u, v, depth), point, atol=1e-12)


def test_target_projects_to_principal_point():
    intr = CameraIntrinsics(64, 48, 50.0)
    extr = look_at((0.0, -2.0, 0.5), (0.0, 0.0, 0.5), (0.0, 0.0, 1.0))
    u, v, depth = project(intr, extr, (0.0, 0.0, 0.5))
    assert (u, v) == pytest.approx((32.0, 24.0))
    assert depth == pytest.approx(2.0)


def test_up_vector_points_up_in_image():
    intr = CameraIntrinsics(64, 64, 50.0)
    extr = look_at((0.0, -2.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    _, v_high, _ = project(intr, extr, (0.0, 0.0, 0.3))
    assert v_high < intr.cy


def test_point_behind_camera_raises():
    extr = CameraExtrinsics(Pose.identity())
    with pytest.raises(BehindCameraError):
        project(CameraIntrinsics(64, 64, 60.0), extr, (0.0, 0.0, -1.0))


def test_unproject_rejects_non_positive_depth():
    with pytest.raises(NonPositiveDepthError):
        unproject(CameraIntrinsics(64, 64, 60.0), CameraExtrinsics(Pose.identity()), 10.0, 10.0, 0.0)


def test_look_at_degenerate_inputs():
    with pytest.raises(DegenerateFrameError):
        look_at((1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (0.0, 0.0, 1.0))
    with pytest.raises(DegenerateFrameError):
        look_at((0.0, 0.0, 2.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


def test_pixel_rays_centre_is_optical_axis():
    intr = CameraIntrinsics(4, 4, 90.0)
    rays = pixel_rays(intr)
    assert rays.shape == (4, 4, 3)
    assert np.all(rays[..., 2] == 1.0)
    # pixel (1, 1) centre sits half a pixel up-left of the principal point
    np.testing.assert_allclose(rays[1, 1, :2], [-0.5 / 2.0, -0.5 / 2.0])
    assert math.isclose(float(rays[0, 0, 0]), -1.5 / 2.0)
