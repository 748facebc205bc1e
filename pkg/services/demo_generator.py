"""Synthetic pick-style demonstrations rendered over the tabletop scene."""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from scipy.spatial.transform import Rotation as _SciRotation
from scipy.spatial.transform import Slerp

from config import RobotPoseSamplerConfig, Settings, provenance_config
from services.camera import Camera, CameraIntrinsics, look_at
from services.dataset_service import Dataset, Trajectory, new_metadata
from services.geometry import Action, ActionKind, Pose, Rotation
from services.kinematics import IKUnreachableError, JointConfig, KinematicChain, inverse_kinematics, world_to_base
from services.raster import Frame, render
from services.sampler import SeedPath, derive_stream, sample_robot_pose
from services.scene import render_plate
from utils.errors import AugmentError
from utils.logging import get_logger
from workers.frame_pool import run_parallel

logger = get_logger(__name__)


class DemoGenerationError(AugmentError):
    """Raised when no reachable demonstration could be sampled."""


def _segment(start: Pose, end: Pose, steps: int) -> List[Pose]:
    """``steps`` poses from ``start`` toward ``end``, end excluded."""

    keys = _SciRotation.from_quat(
        [[*start.rotation.quat[1:], start.rotation.quat[0]], [*end.rotation.quat[1:], end.rotation.quat[0]]]
    )
    slerp = Slerp([0.0, 1.0], keys)
    fractions = np.arange(steps) / steps
    rotations = slerp(fractions).as_quat()
    return [
        Pose(Rotation.from_quat([q[3], q[0], q[1], q[2]]), (1.0 - s) * start.translation + s * end.translation)
        for s, q in zip(fractions, rotations)
    ]


def gripper_path(waypoints: List[Pose], frames: int, grasp_fraction: float) -> List[Pose]:
    """Linear translation plus slerp through start, grasp and end waypoints."""

    start, grasp, end = waypoints
    first = max(1, int(round(frames * grasp_fraction)))
    second = max(1, frames - first - 1)
    path = _segment(start, grasp, first) + _segment(grasp, end, second) + [end]
    return path[:frames]


def _solve_path(chain: KinematicChain, path: List[Pose], settings: Settings) -> List[JointConfig]:
    solutions: List[JointConfig] = []
    seed: Optional[JointConfig] = None
    for pose in path:
        q = inverse_kinematics(chain, world_to_base(chain, pose), seed=seed, cfg=settings.ik)
        solutions.append(q)
        seed = q
    return solutions


def generate_demos(
    chain: KinematicChain,
    task: str,
    count: int,
    frames: int,
    settings: Settings,
    seed_path: SeedPath,
    name: Optional[str] = None,
    workers: Optional[int] = None,
) -> Dataset:
    """``count`` trajectories of ``frames`` steps: approach, grasp, carry.

    Actions are absolute targets of the next gripper pose (base frame); the
    gripper channel is 1 (open) until the grasp and 0 afterwards.
    """

    if frames < 2:
        raise ValueError("demonstrations need at least two frames")
    demo = settings.demo
    sampler_cfg = RobotPoseSamplerConfig(
        box_lo=demo.box_lo, box_hi=demo.box_hi, zenith_std=demo.zenith_std, sample_roll=False
    )
    camera = Camera(
        CameraIntrinsics(settings.image_width, settings.image_height, demo.camera_fov),
        look_at(demo.camera_eye, demo.camera_target, (0.0, 0.0, 1.0)),
    )
    plate = render_plate(camera, settings.scene, settings.render)
    grasp_index = max(1, int(round(frames * demo.grasp_fraction)))
    entry = {"stage": "gen-demos", "config": provenance_config(settings), "seed_path": seed_path.to_list()}

    trajectories: List[Trajectory] = []
    for i in range(count):
        trajectory_id = f"{task}-{chain.name}-{i:04d}"
        for attempt in range(demo.max_attempts):
            stream = derive_stream(seed_path.extend("gen-demos", trajectory_id, attempt))
            waypoints = [sample_robot_pose(sampler_cfg, stream) for _ in range(3)]
            path = gripper_path(waypoints, frames, demo.grasp_fraction)
            try:
                solutions = _solve_path(chain, path, settings)
                break
            except IKUnreachableError:
                logger.debug("Demo path unreachable; resampling", extra={"trajectory": trajectory_id, "attempt": attempt})
        else:
            raise DemoGenerationError(f"{trajectory_id}: no reachable path after {demo.max_attempts} attempts")

        base_path = [world_to_base(chain, pose) for pose in path]

        def frame_at(j: int) -> Frame:
            rendered = render(chain, solutions[j], camera, settings.render, plate=plate)
            target = base_path[min(j + 1, frames - 1)]
            gripper = 1.0 if j < grasp_index else 0.0
            return rendered.replace(gripper_pose=base_path[j], action=Action(ActionKind.ABSOLUTE, target, gripper))

        rendered_frames = run_parallel(frame_at, range(frames), workers=workers)
        trajectories.append(Trajectory(trajectory_id, chain.name, task, tuple(rendered_frames), (dict(entry),)))
        logger.info("Generated demonstration", extra={"trajectory": trajectory_id, "frames": frames})

    return Dataset(name or f"{task}-{chain.name}", tuple(trajectories), new_metadata(kind="demonstrations"))
