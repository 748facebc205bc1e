"""Paired renders of several robots at one gripper pose under one camera."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from config import Settings, provenance_config
from services.camera import Camera
from services.dataset_service import Dataset, Trajectory, new_metadata
from services.kinematics import IKUnreachableError, KinematicChain, inverse_kinematics, world_to_base
from services.raster import Frame, composite, fit_plate, load_background_corpus, render, zoom_frame
from services.sampler import (
    SeedPath,
    derive_stream,
    sample_brightness_delta,
    sample_camera,
    sample_robot_pose,
    sample_zoom_factor,
)
from utils.logging import get_logger
from workers.frame_pool import run_parallel

logger = get_logger(__name__)

PAIRED_TASK = "paired"


@dataclass(slots=True)
class PairedResult:
    dataset: Dataset
    poses_requested: int
    pairs_emitted: int
    skipped_poses: List[int] = field(default_factory=list)
    skipped_pairs: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "poses_requested": self.poses_requested,
            "pairs_emitted": self.pairs_emitted,
            "skipped_poses": self.skipped_poses,
            "skipped_pairs": self.skipped_pairs,
        }


@dataclass(slots=True)
class _PoseOutcome:
    index: int
    trajectories: List[Trajectory]
    pairs: int
    skipped: bool


def _pair_trajectories(
    pair_id: str,
    frames: Dict[str, Frame],
    entry: Dict[str, Any],
    suffix: str = "",
) -> List[Trajectory]:
    return [
        Trajectory(
            id=f"{pair_id}-{robot}{suffix}",
            robot=robot,
            task=PAIRED_TASK,
            frames=(frame,),
            provenance=({**entry, "pair_id": pair_id, "variant": suffix.lstrip("-") or "plain"},),
        )
        for robot, frame in frames.items()
    ]


def gen_paired(
    chains: Sequence[KinematicChain],
    count: int,
    settings: Settings,
    seed_path: SeedPath,
    backgrounds: Optional[Path] = None,
    workers: Optional[int] = None,
    name: str = "paired",
) -> PairedResult:
    """Render every chain at ``count`` sampled gripper poses, each under several cameras.

    A pose that any chain cannot reach is skipped for all of them. With
    ``backgrounds``, every pair also gets a pasted variant sharing plate and
    zoom, with brightness drawn per image.
    """

    if len(chains) < 2:
        raise ValueError("paired generation needs at least two robots")
    corpus = load_background_corpus(backgrounds) if backgrounds is not None else None
    cams = settings.paired.cameras_per_pose
    entry = {
        "stage": "gen-paired",
        "robots": [c.name for c in chains],
        "config": provenance_config(settings),
        "seed_path": seed_path.to_list(),
    }

    def one_pose(k: int) -> _PoseOutcome:
        world_pose = sample_robot_pose(settings.robot_pose, derive_stream(seed_path.extend("gen-paired-pose", "", k)))
        solutions = {}
        for chain in chains:
            try:
                solutions[chain.name] = inverse_kinematics(chain, world_to_base(chain, world_pose), cfg=settings.ik)
            except IKUnreachableError:
                logger.debug("Pose unreachable", extra={"pose": k, "chain": chain.name})
                return _PoseOutcome(k, [], 0, True)

        trajectories: List[Trajectory] = []
        for c in range(cams):
            extr, intr = sample_camera(
                settings.camera,
                world_pose.translation,
                derive_stream(seed_path.extend("gen-paired-camera", str(k), c)),
                settings.image_width,
                settings.image_height,
            )
            camera = Camera(intr, extr)
            frames = {
                chain.name: render(chain, solutions[chain.name], camera, settings.render) for chain in chains
            }
            pair_id = f"pair-{k:05d}-c{c}"
            trajectories.extend(_pair_trajectories(pair_id, frames, entry))

            if corpus is not None:
                stream = derive_stream(seed_path.extend("gen-paired-background", str(k), c))
                choice = int(stream.integers(len(corpus)))
                zoom = sample_zoom_factor(settings.paired.zoom_range, stream)
                plate = fit_plate(corpus[choice][1], intr.width, intr.height)
                pasted = {}
                for chain in chains:
                    delta = sample_brightness_delta(settings.paired.brightness_range, stream)
                    pasted[chain.name] = zoom_frame(composite(frames[chain.name], plate, delta), zoom)
                trajectories.extend(_pair_trajectories(pair_id, pasted, entry, suffix="-bg"))
        return _PoseOutcome(k, trajectories, cams, False)

    outcomes = run_parallel(one_pose, range(count), workers=workers)
    trajectories = [t for o in outcomes for t in o.trajectories]
    skipped = [o.index for o in outcomes if o.skipped]
    result = PairedResult(
        dataset=Dataset(name, tuple(trajectories), new_metadata(kind="paired")),
        poses_requested=count,
        pairs_emitted=sum(o.pairs for o in outcomes),
        skipped_poses=skipped,
        skipped_pairs=len(skipped) * cams,
    )
    if skipped:
        logger.warning("Skipped unreachable poses", extra={"skipped": len(skipped), "requested": count})
    logger.info("Paired generation done", extra=result.to_dict() | {"skipped_poses": len(skipped)})
    return result
