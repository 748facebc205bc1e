"""Shared pytest fixtures: small cameras, built-in chains and a tiny trajectory."""

from typing import List

import numpy as np
import pytest

from config import Settings
from services.camera import Camera, CameraIntrinsics, look_at
from services.chain_registry import get_chain
from services.dataset_service import Dataset, Trajectory, new_metadata
from services.geometry import Action, ActionKind
from services.kinematics import JointConfig, KinematicChain
from services.raster import Frame, render
from services.scene import render_plate
from workers.frame_pool import configure_pool

SMALL = 64
EYE = (0.35, 1.1, 1.35)
TARGET = (-0.05, 0.0, 0.95)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for name in ("XAUG_CHAIN_REGISTRY", "XAUG_WORKERS", "XAUG_PARALLEL_BACKEND", "XAUG_MASTER_SEED"):
        monkeypatch.delenv(name, raising=False)
    configure_pool(workers=1, backend="sequential")
    yield
    configure_pool()


@pytest.fixture
def settings() -> Settings:
    return Settings(
        workers=1,
        parallel_backend="sequential",
        image_width=SMALL,
        image_height=SMALL,
        _env_file=None,
    )


@pytest.fixture
def small_camera() -> Camera:
    return Camera(CameraIntrinsics(SMALL, SMALL, 55.0), look_at(EYE, TARGET, (0.0, 0.0, 1.0)))


@pytest.fixture
def arm_a() -> KinematicChain:
    return get_chain("arm-A")


@pytest.fixture
def arm_b() -> KinematicChain:
    return get_chain("arm-B")


@pytest.fixture
def planar() -> KinematicChain:
    return get_chain("planar-2")


def jittered_configs(chain: KinematicChain, count: int, scale: float = 0.08) -> List[JointConfig]:
    stream = np.random.default_rng(7)
    configs = []
    for _ in range(count):
        q = chain.home.angles + stream.uniform(-scale, scale, chain.dof)
        configs.append(JointConfig(np.clip(q, chain.lower, chain.upper)))
    return configs


def make_trajectory(chain: KinematicChain, camera: Camera, count: int = 3, trajectory_id: str = "traj-0", task: str = "pick") -> Trajectory:
    plate = render_plate(camera)
    rendered = [render(chain, q, camera, plate=plate) for q in jittered_configs(chain, count)]
    frames: List[Frame] = []
    for j, frame in enumerate(rendered):
        target = rendered[min(j + 1, count - 1)].gripper_pose
        frames.append(frame.replace(action=Action(ActionKind.ABSOLUTE, target, 1.0 if j < count // 2 else 0.0)))
    return Trajectory(trajectory_id, chain.name, task, tuple(frames), ({"stage": "fixture"},))


@pytest.fixture
def tiny_trajectory(arm_a, small_camera) -> Trajectory:
    return make_trajectory(arm_a, small_camera)


@pytest.fixture
def tiny_dataset(tiny_trajectory) -> Dataset:
    return Dataset("tiny", (tiny_trajectory,), new_metadata(kind="fixture"))
