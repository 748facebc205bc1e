"""Robot augmentation: segment, inpaint, cross-paint and paste.

Each stage sits behind a small protocol so an external model can replace the
geometric default (see ``services.plugin_client``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from scipy import ndimage

from config import IKConfig, RenderConfig, RoAugConfig
from services.dataset_service import Trajectory
from services.kinematics import (
    IKUnreachableError,
    JointConfig,
    KinematicChain,
    base_to_world,
    ik_residual,
    inverse_kinematics,
    world_to_base,
)
from services.raster import BackgroundPlate, Frame, composite, render
from services.sampler import SeedPath, derive_stream, sample_brightness_delta
from utils.errors import AugmentError
from utils.logging import get_logger
from workers.frame_pool import run_guarded, run_parallel

logger = get_logger(__name__)

_INPAINT_ROW_CHUNK = 32


class TranslationFailedError(AugmentError):
    """Raised in strict mode when a frame cannot be cross-painted."""


@dataclass(frozen=True, slots=True, eq=False)
class RobotLayer:
    """Robot-only render: colour, depth and mask of the target robot."""

    frame: Frame
    joint_config: Optional[JointConfig] = None
    position_residual: float = 0.0
    rotation_residual: float = 0.0

    @property
    def mask(self) -> np.ndarray:
        return self.frame.mask

    @property
    def rgba(self) -> np.ndarray:
        alpha = self.frame.mask.astype(np.uint8)[..., None] * 255
        return np.concatenate([self.frame.rgb, alpha], axis=-1)


@runtime_checkable
class Segmenter(Protocol):
    def mask(self, frame: Frame) -> np.ndarray: ...


@runtime_checkable
class RobotTranslator(Protocol):
    def translate(
        self,
        frame: Frame,
        source_chain: KinematicChain,
        target_chain: KinematicChain,
        hole: Optional[np.ndarray] = None,
    ) -> RobotLayer: ...


@runtime_checkable
class Inpainter(Protocol):
    def inpaint(self, frames: Sequence[Frame], masks: Sequence[np.ndarray]) -> List[Frame]: ...


def _depth_heuristic_mask(frame: Frame, margin: float = 0.05) -> np.ndarray:
    """Near-field pixels: valid depth clearly in front of the median scene depth."""

    valid = frame.depth > 0
    if not valid.any():
        return np.zeros(frame.shape, dtype=bool)
    threshold = float(np.median(frame.depth[valid])) - margin
    return valid & (frame.depth < threshold)


class OracleSegmenter:
    """Renderer mask when the frame carries one, else the source chain re-rendered.

    Frames with neither a valid mask nor a known chain fall back to a depth
    heuristic.
    """

    def __init__(
        self,
        chain: Optional[KinematicChain] = None,
        render_cfg: Optional[RenderConfig] = None,
        ik_cfg: Optional[IKConfig] = None,
        dilation: int = 1,
    ):
        self.chain = chain
        self.render_cfg = render_cfg or RenderConfig()
        self.ik_cfg = ik_cfg or IKConfig()
        self.dilation = dilation

    def mask(self, frame: Frame) -> np.ndarray:
        if frame.mask_valid:
            return frame.mask.copy()
        if self.chain is not None:
            try:
                q = frame.joint_config
                if q is None:
                    q = inverse_kinematics(self.chain, frame.gripper_pose, cfg=self.ik_cfg)
                mask = render(self.chain, q, frame.camera, self.render_cfg).mask
            except IKUnreachableError:
                logger.warning("Segmenter IK failed; using depth heuristic", extra={"chain": self.chain.name})
                return _depth_heuristic_mask(frame)
            if self.dilation > 0:
                mask = ndimage.binary_dilation(mask, iterations=self.dilation)
            return mask
        return _depth_heuristic_mask(frame)


def plate_inpaint(frames: Sequence[Frame], masks: Sequence[np.ndarray]) -> List[Frame]:
    """Fill hole pixels with the temporal median over frames exposing them.

    Pixels hidden in every frame take the median of the nearest pixel that some
    frame exposes. Pixels outside the holes are returned untouched.
    """

    if not frames:
        raise ValueError("plate_inpaint needs at least one frame")
    holes = np.stack([np.asarray(m, dtype=bool) for m in masks])
    if not holes.any():
        return list(frames)

    height, width = frames[0].shape
    rgb_median = np.empty((height, width, 3))
    depth_median = np.empty((height, width))
    rgb_stack = np.stack([f.rgb for f in frames])
    depth_stack = np.stack([f.depth for f in frames])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for r0 in range(0, height, _INPAINT_ROW_CHUNK):
            r1 = min(r0 + _INPAINT_ROW_CHUNK, height)
            chunk_holes = holes[:, r0:r1]
            rgb = rgb_stack[:, r0:r1].astype(float)
            rgb[chunk_holes] = np.nan
            rgb_median[r0:r1] = np.nanmedian(rgb, axis=0)
            depth = depth_stack[:, r0:r1].astype(float)
            depth[chunk_holes] = np.nan
            depth_median[r0:r1] = np.nanmedian(depth, axis=0)

    never_seen = holes.all(axis=0)
    if never_seen.all():
        logger.warning("Every pixel is masked in every frame; nothing to inpaint from")
        return list(frames)
    if never_seen.any():
        _, (rows, cols) = ndimage.distance_transform_edt(never_seen, return_indices=True)
        rgb_median = rgb_median[rows, cols]
        depth_median = depth_median[rows, cols]

    fill_rgb = np.clip(np.floor(rgb_median + 0.5), 0, 255).astype(np.uint8)
    fill_depth = depth_median.astype(np.float32)
    filled = []
    for frame, hole in zip(frames, holes):
        if not hole.any():
            filled.append(frame)
            continue
        rgb = frame.rgb.copy()
        depth = frame.depth.copy()
        rgb[hole] = fill_rgb[hole]
        depth[hole] = fill_depth[hole]
        filled.append(frame.replace(rgb=rgb, depth=depth))
    return filled


class PlateInpainter:
    def inpaint(self, frames: Sequence[Frame], masks: Sequence[np.ndarray]) -> List[Frame]:
        return plate_inpaint(frames, masks)


def _occluder(frame: Frame, hole: Optional[np.ndarray]) -> np.ndarray:
    """Scene depth the new robot must beat; holes and invalid depth never occlude."""

    occluder = np.where(frame.depth > 0, frame.depth.astype(float), np.inf)
    if hole is not None:
        occluder[np.asarray(hole, dtype=bool)] = np.inf
    return occluder


class GeometricTranslator:
    """Cross-paints by solving the target chain's IK at the frame's gripper pose."""

    def __init__(self, render_cfg: Optional[RenderConfig] = None, ik_cfg: Optional[IKConfig] = None):
        self.render_cfg = render_cfg or RenderConfig()
        self.ik_cfg = ik_cfg or IKConfig()

    def target_pose(self, frame: Frame, source_chain: KinematicChain, target_chain: KinematicChain):
        return world_to_base(target_chain, base_to_world(source_chain, frame.gripper_pose))

    def _initial_seed(self, frame: Frame, source_chain: KinematicChain, target_chain: KinematicChain) -> Optional[JointConfig]:
        if source_chain.name == target_chain.name and frame.joint_config is not None:
            return frame.joint_config
        return None

    def solve(
        self,
        frame: Frame,
        source_chain: KinematicChain,
        target_chain: KinematicChain,
        seed: Optional[JointConfig] = None,
    ) -> JointConfig:
        own = self._initial_seed(frame, source_chain, target_chain)
        return inverse_kinematics(
            target_chain,
            self.target_pose(frame, source_chain, target_chain),
            seed=own if own is not None else seed,
            cfg=self.ik_cfg,
        )

    def plan(
        self,
        frames: Sequence[Frame],
        source_chain: KinematicChain,
        target_chain: KinematicChain,
    ) -> List[Union[JointConfig, Exception]]:
        """Sequential IK over a trajectory, each frame seeded by the previous solution."""

        solutions: List[Union[JointConfig, Exception]] = []
        previous: Optional[JointConfig] = None
        for index, frame in enumerate(frames):
            try:
                q = self.solve(frame, source_chain, target_chain, seed=previous)
            except IKUnreachableError as exc:
                logger.debug("IK failed", extra={"frame": index, "chain": target_chain.name})
                solutions.append(exc)
                continue
            solutions.append(q)
            previous = q
        return solutions

    def render_layer(
        self,
        frame: Frame,
        source_chain: KinematicChain,
        target_chain: KinematicChain,
        q: JointConfig,
        hole: Optional[np.ndarray] = None,
    ) -> RobotLayer:
        layer = render(target_chain, q, frame.camera, self.render_cfg, occluder=_occluder(frame, hole))
        pos_err, rot_err = ik_residual(target_chain, q, self.target_pose(frame, source_chain, target_chain))
        return RobotLayer(layer, q, pos_err, rot_err)

    def translate(
        self,
        frame: Frame,
        source_chain: KinematicChain,
        target_chain: KinematicChain,
        hole: Optional[np.ndarray] = None,
    ) -> RobotLayer:
        q = self.solve(frame, source_chain, target_chain)
        return self.render_layer(frame, source_chain, target_chain, q, hole)


def geometric_translate(
    frame: Frame,
    source_chain: KinematicChain,
    target_chain: KinematicChain,
    seed: Optional[JointConfig] = None,
    render_cfg: Optional[RenderConfig] = None,
    ik_cfg: Optional[IKConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """RGBA robot layer and mask of ``target_chain`` at the frame's gripper pose."""

    translator = GeometricTranslator(render_cfg, ik_cfg)
    q = translator.solve(frame, source_chain, target_chain, seed=seed)
    layer = translator.render_layer(frame, source_chain, target_chain, q)
    return layer.rgba, layer.mask


@dataclass(slots=True)
class FrameReport:
    index: int
    success: bool
    brightness_delta: int
    position_residual: Optional[float] = None
    rotation_residual: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "success": self.success,
            "brightness_delta": self.brightness_delta,
            "position_residual": self.position_residual,
            "rotation_residual": self.rotation_residual,
            "error": self.error,
        }


@dataclass(slots=True)
class RoAugReport:
    trajectory_id: str
    source: str
    target: str
    frames: List[FrameReport] = field(default_factory=list)

    @property
    def succeeded(self) -> int:
        return sum(1 for f in self.frames if f.success)

    @property
    def failed(self) -> int:
        return len(self.frames) - self.succeeded

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "source": self.source,
            "target": self.target,
            "summary": {"frames": len(self.frames), "succeeded": self.succeeded, "failed": self.failed},
            "frames": [f.to_dict() for f in self.frames],
        }


@dataclass(slots=True)
class RoAugStages:
    segmenter: Segmenter
    translator: RobotTranslator
    inpainter: Inpainter


def default_stages(
    source_chain: KinematicChain,
    render_cfg: Optional[RenderConfig] = None,
    ik_cfg: Optional[IKConfig] = None,
) -> RoAugStages:
    return RoAugStages(
        segmenter=OracleSegmenter(source_chain, render_cfg, ik_cfg),
        translator=GeometricTranslator(render_cfg, ik_cfg),
        inpainter=PlateInpainter(),
    )


def _translate_all(
    translator: RobotTranslator,
    frames: Sequence[Frame],
    masks: Sequence[np.ndarray],
    source_chain: KinematicChain,
    target_chain: KinematicChain,
    workers: Optional[int],
) -> List[Union[RobotLayer, Exception]]:
    indices = range(len(frames))
    plan = getattr(translator, "plan", None)
    if plan is not None and hasattr(translator, "render_layer"):
        solutions = plan(frames, source_chain, target_chain)

        def render_one(j: int) -> RobotLayer:
            q = solutions[j]
            if isinstance(q, Exception):
                raise q
            return translator.render_layer(frames[j], source_chain, target_chain, q, masks[j])

    else:

        def render_one(j: int) -> RobotLayer:
            return translator.translate(frames[j], source_chain, target_chain, masks[j])

    return run_parallel(lambda j: run_guarded(render_one, j), indices, workers=workers)


def ro_aug(
    traj: Trajectory,
    source_chain: KinematicChain,
    target_chain: KinematicChain,
    cfg: RoAugConfig,
    seed_path: SeedPath,
    stages: Optional[RoAugStages] = None,
    strict: bool = False,
    workers: Optional[int] = None,
    provenance_extra: Optional[Dict[str, Any]] = None,
) -> Tuple[Trajectory, RoAugReport]:
    """Replace the source robot in every frame with the target robot.

    Poses and actions are copied untouched; only observations change.
    """

    stages = stages or default_stages(source_chain)
    frames = traj.frames
    report = RoAugReport(traj.id, source_chain.name, target_chain.name)

    masks = run_parallel(stages.segmenter.mask, frames, workers=workers)
    backgrounds = stages.inpainter.inpaint(frames, masks)
    layers = _translate_all(stages.translator, frames, masks, source_chain, target_chain, workers)

    out_frames: List[Frame] = []
    for j, (frame, background, layer) in enumerate(zip(frames, backgrounds, layers)):
        stream = derive_stream(seed_path.extend("ro-aug", traj.id, j))
        delta = sample_brightness_delta(cfg.brightness_range, stream)

        if isinstance(layer, Exception):
            if strict:
                raise TranslationFailedError(
                    f"trajectory {traj.id} frame {j}: {source_chain.name}->{target_chain.name} failed: {layer}"
                ) from layer
            logger.warning(
                "Cross-painting failed; keeping original frame",
                extra={"trajectory": traj.id, "frame": j, "error": str(layer)},
            )
            failure = FrameReport(j, False, delta, error=str(layer))
            if isinstance(layer, IKUnreachableError):
                failure.position_residual = layer.position_residual
                failure.rotation_residual = layer.rotation_residual
            report.frames.append(failure)
            out_frames.append(frame)
            continue

        plate = BackgroundPlate(background.rgb, background.depth)
        pasted = composite(layer.frame, plate, delta)
        out_frames.append(
            pasted.replace(
                gripper_pose=frame.gripper_pose,
                action=frame.action,
                joint_config=layer.joint_config,
                mask_valid=True,
            )
        )
        report.frames.append(FrameReport(j, True, delta, layer.position_residual, layer.rotation_residual))

    entry: Dict[str, Any] = {
        "stage": f"ro-aug:{source_chain.name}->{target_chain.name}",
        "config": cfg.model_dump(mode="json"),
        "seed_path": seed_path.to_list(),
        "failed_frames": [f.index for f in report.frames if not f.success],
    }
    if provenance_extra:
        entry.update(provenance_extra)
    result = traj.with_frames(out_frames).with_provenance(entry)
    result = Trajectory(result.id, target_chain.name, result.task, result.frames, result.provenance)
    logger.info(
        "Ro-Aug trajectory done",
        extra={"trajectory": traj.id, "frames": len(out_frames), "failed": report.failed},
    )
    return result, report
