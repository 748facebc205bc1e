"""Throughput harness for the geometric stages."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from config import Settings
from services.camera import Camera, CameraIntrinsics, look_at
from services.chain_registry import get_chain
from services.kinematics import JointConfig
from services.raster import Frame, render
from services.roaug import GeometricTranslator, OracleSegmenter, plate_inpaint
from services.sampler import SeedPath, derive_stream, sample_view_perturbation
from services.scene import render_plate
from services.viaug import reproject
from utils.errors import UsageError
from utils.logging import get_logger
from workers.frame_pool import run_parallel

logger = get_logger(__name__)

STAGES = ("segment", "translate", "inpaint", "reproject")
BENCH_SIZE = 256

# Learned-model GPU throughputs the geometric stages stand in for.
REFERENCE_FPS = {
    "segment": ("robot segmentation model", 4.1),
    "translate": ("robot-to-robot generation model", 3.2),
    "inpaint": ("video inpainting model", 4.6),
    "reproject": ("novel view synthesis model", 1.3),
}


@dataclass(slots=True)
class BenchRow:
    label: str
    workers: Optional[int]
    fps: float
    reference: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {"label": self.label, "workers": self.workers, "fps": round(self.fps, 3), "reference": self.reference}


def synthetic_frames(count: int, settings: Settings, chain_name: str = "arm-A") -> List[Frame]:
    """Deterministic arm renders over the scene, joints jittered around home."""

    chain = get_chain(chain_name, settings.chain_registry)
    camera = Camera(
        CameraIntrinsics(BENCH_SIZE, BENCH_SIZE, settings.demo.camera_fov),
        look_at(settings.demo.camera_eye, settings.demo.camera_target, (0.0, 0.0, 1.0)),
    )
    plate = render_plate(camera, settings.scene, settings.render)
    frames = []
    for j in range(count):
        stream = derive_stream(SeedPath(settings.master_seed).extend("bench", chain.name, j))
        q = np.clip(chain.home.angles + stream.uniform(-0.15, 0.15, chain.dof), chain.lower, chain.upper)
        frames.append(render(chain, JointConfig(q), camera, settings.render, plate=plate))
    return frames


def _stage_runner(stage: str, frames: List[Frame], settings: Settings) -> Callable[[int], Callable[[], object]]:
    chain = get_chain("arm-A", settings.chain_registry)
    target = get_chain("arm-B", settings.chain_registry)
    if stage == "segment":
        segmenter = OracleSegmenter(chain, settings.render, settings.ik)
        unmasked = [f.replace(mask_valid=False) for f in frames]
        return lambda workers: lambda: run_parallel(segmenter.mask, unmasked, workers=workers)
    if stage == "translate":
        translator = GeometricTranslator(settings.render, settings.ik)
        return lambda workers: lambda: run_parallel(
            lambda f: translator.translate(f, chain, target, f.mask), frames, workers=workers
        )
    if stage == "inpaint":
        masks = [f.mask for f in frames]
        return lambda workers: lambda: plate_inpaint(frames, masks)
    if stage == "reproject":
        perturbations = [
            sample_view_perturbation(settings.viaug, derive_stream(SeedPath(settings.master_seed).extend("bench-view", "", j)))
            for j in range(len(frames))
        ]
        return lambda workers: lambda: run_parallel(
            lambda j: reproject(frames[j], perturbations[j]), range(len(frames)), workers=workers
        )
    raise UsageError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")


def bench(stage: str, count: int, settings: Settings, workers: Optional[int] = None) -> List[BenchRow]:
    """Frames per second of ``stage`` single- and multi-worker, plus reference rows."""

    if count <= 0:
        raise UsageError("bench needs at least one frame")
    frames = synthetic_frames(count, settings)
    runner = _stage_runner(stage, frames, settings)
    multi = workers or max(2, os.cpu_count() or 2)

    rows = []
    for n in (1, multi):
        start = time.perf_counter()
        runner(n)()
        elapsed = max(time.perf_counter() - start, 1e-9)
        rows.append(BenchRow(f"{stage} (geometric)", n, count / elapsed))

    if (os.cpu_count() or 1) >= 4 and rows[1].fps < rows[0].fps:
        logger.warning(
            "Multi-worker throughput below single-worker",
            extra={"stage": stage, "single_fps": rows[0].fps, "multi_fps": rows[1].fps},
        )

    for name, (label, fps) in REFERENCE_FPS.items():
        rows.append(BenchRow(f"{label} ({name}), reference, non-binding", None, fps, reference=True))
    return rows


def format_table(rows: List[BenchRow]) -> str:
    lines = [f"{'stage':<64} {'workers':>7} {'fps':>10}"]
    for row in rows:
        workers = "-" if row.workers is None else str(row.workers)
        lines.append(f"{row.label:<64} {workers:>7} {row.fps:>10.2f}")
    return "\n".join(lines)
