"""Command handlers: each one glues the services together for a CLI command."""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image

from config import Settings, provenance_config
from services.bench_service import bench, format_table
from services.chain_registry import get_chain
from services.dataset_service import (
    Dataset,
    apply_alignment,
    compose_cross_product,
    read_dataset,
    write_dataset,
)
from services.demo_generator import generate_demos
from services.geometry import Pose
from services.kinematics import KinematicChain
from services.oxe_import import import_episodes
from services.paired_data import gen_paired
from services.plugin_client import (
    ExternalInpainter,
    ExternalSegmenter,
    ExternalTranslator,
    ExternalViewSynthesizer,
    PluginProcess,
)
from services.raster import montage
from services.roaug import RoAugStages, default_stages, ro_aug
from services.sampler import SeedPath
from services.stats_service import stats
from services.viaug import ViewSynthesizer, vi_aug
from utils.errors import AugmentError, UsageError
from utils.logging import get_logger

logger = get_logger(__name__)

RUN_REPORT_FILENAME = "run_report.json"


@dataclass(slots=True)
class RunReport:
    """Machine-readable record written next to every output dataset."""

    command: str
    config: Dict[str, Any]
    trajectories: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def record(self, trajectory_id: str, status: str, **details: Any) -> None:
        self.trajectories.append({"id": trajectory_id, "status": status, **details})

    def fail(self, trajectory_id: str, stage: str, error: str, frame: Optional[int] = None) -> None:
        failure: Dict[str, Any] = {"trajectory": trajectory_id, "stage": stage, "error": error}
        if frame is not None:
            failure["frame"] = frame
        self.failures.append(failure)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "trajectories": self.trajectories,
            "failures": self.failures,
            "summary": self.summary,
            "timings": self.timings,
        }

    def write(self, directory: Path) -> Path:
        path = Path(directory) / RUN_REPORT_FILENAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


@dataclass(slots=True)
class CommandOutcome:
    report: Optional[RunReport] = None
    partial: bool = False


@contextmanager
def timed(report: RunReport, key: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        report.timings[key] = round(time.perf_counter() - start, 6)


def _names(value: str) -> List[str]:
    names = [part.strip() for part in value.split(",") if part.strip()]
    if not names:
        raise UsageError(f"expected a comma-separated list, got {value!r}")
    return names


def _pose7(value: str) -> Pose:
    try:
        numbers = [float(part) for part in value.split(",")]
    except ValueError as exc:
        raise UsageError(f"transform must be seven numbers, got {value!r}") from exc
    if len(numbers) != 7:
        raise UsageError(f"transform must be seven numbers (tx,ty,tz,qw,qx,qy,qz), got {len(numbers)}")
    return Pose.from_array7(numbers)


def _chain(name: str, settings: Settings) -> KinematicChain:
    return get_chain(name, settings.chain_registry)


def _seed_path(settings: Settings) -> SeedPath:
    return SeedPath(settings.master_seed)


def _new_report(command: str, settings: Settings) -> RunReport:
    return RunReport(command, settings.model_dump(mode="json"))


def _read(path: str, settings: Settings) -> Dataset:
    return read_dataset(Path(path), workers=settings.workers)


def _write(ds: Dataset, out: Path, report: RunReport, settings: Settings) -> None:
    with timed(report, "write"):
        write_dataset(ds, out, workers=settings.workers)
    report.summary.setdefault("trajectories", len(ds))
    report.write(out)


def _roaug_stages(settings: Settings, source: KinematicChain, stack: ExitStack) -> RoAugStages:
    stages = default_stages(source, settings.render, settings.ik)
    cfg = settings.roaug
    if cfg.segmenter_cmd:
        stages.segmenter = ExternalSegmenter(stack.enter_context(PluginProcess(cfg.segmenter_cmd)))
    if cfg.translator_cmd:
        stages.translator = ExternalTranslator(stack.enter_context(PluginProcess(cfg.translator_cmd)))
    if cfg.inpainter_cmd:
        stages.inpainter = ExternalInpainter(stack.enter_context(PluginProcess(cfg.inpainter_cmd)))
    return stages


def _synthesizer(settings: Settings, stack: ExitStack) -> Optional[ViewSynthesizer]:
    if not settings.synthesizer_cmd:
        return None
    return ExternalViewSynthesizer(stack.enter_context(PluginProcess(settings.synthesizer_cmd)))


def _ro_aug_dataset(
    ds: Dataset,
    source: KinematicChain,
    target: KinematicChain,
    settings: Settings,
    stages: RoAugStages,
    report: RunReport,
) -> Tuple[Dataset, bool]:
    seed_path = _seed_path(settings)
    extra = {"run_config": provenance_config(settings)}
    partial = False
    out = []
    for trajectory in ds.trajectories:
        if trajectory.robot != source.name:
            logger.warning(
                "Trajectory robot differs from --source",
                extra={"trajectory": trajectory.id, "robot": trajectory.robot, "source": source.name},
            )
        try:
            result, frame_report = ro_aug(
                trajectory, source, target, settings.roaug, seed_path,
                stages=stages, workers=settings.workers, provenance_extra=extra,
            )
        except AugmentError as exc:
            logger.warning("Ro-Aug failed for trajectory", extra={"trajectory": trajectory.id, "error": str(exc)})
            report.record(trajectory.id, "failed", stage="ro-aug")
            report.fail(trajectory.id, "ro-aug", str(exc))
            out.append(trajectory)
            partial = True
            continue
        for frame in frame_report.frames:
            if not frame.success:
                report.fail(trajectory.id, "ro-aug", frame.error or "", frame=frame.index)
        status = "partial" if frame_report.failed else "ok"
        partial = partial or bool(frame_report.failed)
        report.record(
            trajectory.id, status, stage="ro-aug",
            source=frame_report.source, target=frame_report.target,
            frames=len(frame_report.frames), succeeded=frame_report.succeeded, failed=frame_report.failed,
        )
        out.append(result)
    return ds.with_trajectories(out), partial


def _vi_aug_dataset(
    ds: Dataset,
    settings: Settings,
    synthesizer: Optional[ViewSynthesizer],
    report: RunReport,
) -> Tuple[Dataset, bool]:
    seed_path = _seed_path(settings)
    extra = {"run_config": provenance_config(settings)}
    partial = False
    out = []
    for trajectory in ds.trajectories:
        try:
            result, view_report = vi_aug(
                trajectory, settings.viaug, seed_path,
                synthesizer=synthesizer, workers=settings.workers, provenance_extra=extra,
            )
        except AugmentError as exc:
            logger.warning("Vi-Aug failed for trajectory", extra={"trajectory": trajectory.id, "error": str(exc)})
            report.record(trajectory.id, "failed", stage="vi-aug")
            report.fail(trajectory.id, "vi-aug", str(exc))
            out.append(trajectory)
            partial = True
            continue
        report.record(
            trajectory.id, "ok", stage="vi-aug",
            mode=view_report.mode.value, distinct_perturbations=view_report.distinct,
        )
        out.append(result)
    return ds.with_trajectories(out), partial


def cmd_gen_paired(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("gen-paired", settings)
    chains = [_chain(name, settings) for name in _names(args.robots)]
    backgrounds = Path(args.backgrounds) if args.backgrounds else None
    out = Path(args.out)
    with timed(report, "generate"):
        result = gen_paired(
            chains, args.count, settings, _seed_path(settings),
            backgrounds=backgrounds, workers=settings.workers, name=out.name,
        )
    report.summary.update(result.to_dict())
    for k in result.skipped_poses:
        report.fail(f"pair-{k:05d}", "gen-paired", "pose unreachable for at least one robot")
    for trajectory in result.dataset.trajectories:
        report.record(trajectory.id, "ok", robot=trajectory.robot)
    _write(result.dataset, out, report, settings)
    return CommandOutcome(report, partial=bool(result.skipped_poses))


def cmd_gen_demos(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("gen-demos", settings)
    chain = _chain(args.robot, settings)
    out = Path(args.out)
    with timed(report, "generate"):
        ds = generate_demos(
            chain, args.task, args.count, args.frames, settings, _seed_path(settings),
            name=out.name, workers=settings.workers,
        )
    for trajectory in ds.trajectories:
        report.record(trajectory.id, "ok", frames=len(trajectory.frames))
    _write(ds, out, report, settings)
    return CommandOutcome(report)


def cmd_import_oxe(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("import-oxe", settings)
    out = Path(args.out)
    with timed(report, "import"):
        ds = import_episodes(Path(args.input), args.robot, args.task, name=out.name)
    for trajectory in ds.trajectories:
        report.record(trajectory.id, "ok", frames=len(trajectory.frames))
    _write(ds, out, report, settings)
    return CommandOutcome(report)


def cmd_align(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("align", settings)
    transform = _pose7(args.transform)
    ds = _read(args.input, settings)
    with timed(report, "align"):
        aligned = apply_alignment(ds, transform)
    for trajectory in aligned.trajectories:
        report.record(trajectory.id, "ok")
    _write(aligned.with_trajectories(aligned.trajectories, name=Path(args.out).name), Path(args.out), report, settings)
    return CommandOutcome(report)


def cmd_ro_aug(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("ro-aug", settings)
    source, target = _chain(args.source, settings), _chain(args.target, settings)
    ds = _read(args.input, settings)
    with ExitStack() as stack:
        stages = _roaug_stages(settings, source, stack)
        with timed(report, "ro-aug"):
            augmented, partial = _ro_aug_dataset(ds, source, target, settings, stages, report)
    out = Path(args.out)
    _write(augmented.with_trajectories(augmented.trajectories, name=out.name), out, report, settings)
    return CommandOutcome(report, partial)


def cmd_vi_aug(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("vi-aug", settings)
    ds = _read(args.input, settings)
    with ExitStack() as stack:
        synthesizer = _synthesizer(settings, stack)
        with timed(report, "vi-aug"):
            augmented, partial = _vi_aug_dataset(ds, settings, synthesizer, report)
    out = Path(args.out)
    _write(augmented.with_trajectories(augmented.trajectories, name=out.name), out, report, settings)
    return CommandOutcome(report, partial)


def cmd_rovi_aug(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("rovi-aug", settings)
    source, target = _chain(args.source, settings), _chain(args.target, settings)
    ds = _read(args.input, settings)
    with ExitStack() as stack:
        stages = _roaug_stages(settings, source, stack)
        synthesizer = _synthesizer(settings, stack)
        with timed(report, "ro-aug"):
            robot_swapped, ro_partial = _ro_aug_dataset(ds, source, target, settings, stages, report)
        with timed(report, "vi-aug"):
            augmented, vi_partial = _vi_aug_dataset(robot_swapped, settings, synthesizer, report)
    out = Path(args.out)
    _write(augmented.with_trajectories(augmented.trajectories, name=out.name), out, report, settings)
    return CommandOutcome(report, ro_partial or vi_partial)


def cmd_compose(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    report = _new_report("compose", settings)
    paths = _names(args.inputs)
    if len(paths) != 4:
        raise UsageError("compose needs exactly four inputs: D1^S,D2^T,D2^T->S,D1^S->T")
    inputs = [_read(p, settings) for p in paths]
    extras = [_read(p, settings) for p in args.extra or []]
    out = Path(args.out)
    with timed(report, "compose"):
        composed = compose_cross_product(*inputs, extras=extras, name=out.name)
    report.summary["inputs"] = {ds.name: len(ds) for ds in [*inputs, *extras]}
    cells = Counter(f"{t.robot}|{t.task}" for t in composed.trajectories)
    report.summary["cells"] = dict(sorted(cells.items()))
    for trajectory in composed.trajectories:
        report.record(trajectory.id, "ok", robot=trajectory.robot, task=trajectory.task)
    _write(composed, out, report, settings)
    return CommandOutcome(report)


def cmd_stats(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    summary = stats(_read(args.input, settings))
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return CommandOutcome()


def cmd_preview(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    if args.frames < 1:
        raise UsageError("--frames must be at least 1")
    trajectory = _read(args.input, settings).get(args.traj)
    count = min(args.frames, len(trajectory.frames))
    indices = np.unique(np.linspace(0, len(trajectory.frames) - 1, count).round().astype(int))
    images = [trajectory.frames[j].rgb for j in indices]
    if args.masks:
        images += [np.repeat(trajectory.frames[j].mask[..., None], 3, axis=-1).astype(np.uint8) * 255 for j in indices]
    sheet = montage(images, columns=len(indices))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sheet).save(out, format="PNG")
    logger.info("Wrote preview", extra={"trajectory": trajectory.id, "frames": len(indices), "path": str(out)})
    return CommandOutcome()


def cmd_bench(args: argparse.Namespace, settings: Settings) -> CommandOutcome:
    rows = bench(args.stage, args.frames, settings, workers=args.bench_workers)
    sys.stdout.write(format_table(rows) + "\n")
    return CommandOutcome()


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], CommandOutcome]] = {
    "gen-paired": cmd_gen_paired,
    "gen-demos": cmd_gen_demos,
    "import-oxe": cmd_import_oxe,
    "align": cmd_align,
    "ro-aug": cmd_ro_aug,
    "vi-aug": cmd_vi_aug,
    "rovi-aug": cmd_rovi_aug,
    "compose": cmd_compose,
    "stats": cmd_stats,
    "preview": cmd_preview,
    "bench": cmd_bench,
}
