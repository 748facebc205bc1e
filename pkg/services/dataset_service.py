"""Trajectory/dataset model, on-disk format and cross-robot composition.

On-disk layout (``format_version`` 1)::

    <root>/manifest.json                  written last; per-file sha256
    <root>/<trajectory_id>/trajectory.json
    <root>/<trajectory_id>/rgb_00000.png
    <root>/<trajectory_id>/mask_00000.png  8-bit, 0 or 255
    <root>/<trajectory_id>/depth_00000.dpth

Poses use the 7-number form ``(tx, ty, tz, qw, qx, qy, qz)``; floats are stored
as shortest round-trip decimals, so reading back is bit-exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from services.camera import Camera, CameraExtrinsics, CameraIntrinsics
from services.geometry import Action, ActionKind, Pose, RigidTransform, align_action, align_pose
from services.kinematics import JointConfig
from services.raster import Frame, decode_depth, decode_png, encode_depth, encode_png
from utils.errors import AugmentError, NotFoundError
from utils.logging import get_logger
from workers.frame_pool import run_parallel

logger = get_logger(__name__)

FORMAT_VERSION = 1
MANIFEST_FILENAME = "manifest.json"
TRAJECTORY_FILENAME = "trajectory.json"
CONTROL_RATE_HZ = 15.0
CAMERA_CONVENTION = {
    "image_origin": "top-left, +x right, +y down, pixel centres at +0.5",
    "camera_axes": "+z forward, +x right, +y down",
    "extrinsics": "camera-to-world",
    "fov": "vertical, degrees",
    "pose_form": "tx ty tz qw qx qy qz",
    "euler": "intrinsic XYZ, radians",
}


class DatasetVersionError(AugmentError):
    """Raised when a manifest declares an unsupported format version."""


class ChecksumError(AugmentError):
    """Raised when a dataset file is missing or does not match its manifest checksum."""

    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path


class CompositionError(AugmentError):
    """Raised when datasets cannot be combined."""


class DatasetFormatError(AugmentError):
    """Raised when a manifest or trajectory file is malformed."""


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory:
    id: str
    robot: str
    task: str
    frames: Tuple[Frame, ...]
    provenance: Tuple[Dict[str, Any], ...] = ()

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError(f"trajectory {self.id}: at least one frame required")
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise ValueError(f"trajectory {self.id}: frames differ in dimensions")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape

    def with_frames(self, frames: Sequence[Frame]) -> "Trajectory":
        return dataclasses.replace(self, frames=tuple(frames))

    def with_provenance(self, entry: Dict[str, Any]) -> "Trajectory":
        return dataclasses.replace(self, provenance=self.provenance + (entry,))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Trajectory)
            and (self.id, self.robot, self.task) == (other.id, other.robot, other.task)
            and self.provenance == other.provenance
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True, eq=False)
class Dataset:
    name: str
    trajectories: Tuple[Trajectory, ...]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        trajectories = tuple(self.trajectories)
        ids = [t.id for t in trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset {self.name}: trajectory ids must be unique")
        object.__setattr__(self, "trajectories", trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def get(self, trajectory_id: str) -> Trajectory:
        for trajectory in self.trajectories:
            if trajectory.id == trajectory_id:
                return trajectory
        raise NotFoundError(f"Trajectory {trajectory_id!r} not found in dataset {self.name}")

    def with_trajectories(self, trajectories: Sequence[Trajectory], name: Optional[str] = None) -> "Dataset":
        return Dataset(name or self.name, tuple(trajectories), dict(self.metadata))

    @property
    def chains(self) -> List[str]:
        return sorted({t.robot for t in self.trajectories})

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Dataset)
            and self.name == other.name
            and self.metadata == other.metadata
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.trajectories, other.trajectories))
        )

    __hash__ = None  # type: ignore[assignment]


def apply_alignment(ds: Dataset, t: RigidTransform) -> Dataset:
    """Move every gripper pose and action through ``t``; observations untouched."""

    entry = {"stage": "align", "transform": t.to_array7()}
    aligned = []
    for trajectory in ds.trajectories:
        frames = [
            frame.replace(
                gripper_pose=align_pose(frame.gripper_pose, t),
                action=None if frame.action is None else align_action(frame.action, t),
            )
            for frame in trajectory.frames
        ]
        aligned.append(trajectory.with_frames(frames).with_provenance(entry))
    return ds.with_trajectories(aligned)


def _single_label(ds: Dataset, attr: str) -> Optional[str]:
    labels = {getattr(t, attr) for t in ds.trajectories}
    if len(labels) > 1:
        raise CompositionError(f"dataset {ds.name} mixes {attr} labels: {sorted(labels)}")
    return next(iter(labels), None)


def _check_same(role: str, a: Optional[str], b: Optional[str]) -> None:
    if a is not None and b is not None and a != b:
        raise CompositionError(f"{role} labels disagree: {a!r} vs {b!r}")


def compose_cross_product(
    d1_S: Dataset,
    d2_T: Dataset,
    d2_TtoS: Dataset,
    d1_StoT: Dataset,
    extras: Sequence[Dataset] = (),
    name: str = "cross-product",
) -> Dataset:
    """Union of the four role datasets (plus ``extras``), covering every robot/task cell."""

    robot_s = [_single_label(d, "robot") for d in (d1_S, d2_TtoS)]
    robot_t = [_single_label(d, "robot") for d in (d2_T, d1_StoT)]
    task_1 = [_single_label(d, "task") for d in (d1_S, d1_StoT)]
    task_2 = [_single_label(d, "task") for d in (d2_T, d2_TtoS)]
    _check_same("source robot", *robot_s)
    _check_same("target robot", *robot_t)
    _check_same("task 1", *task_1)
    _check_same("task 2", *task_2)

    inputs = [d1_S, d2_T, d2_TtoS, d1_StoT, *extras]
    shapes = {t.shape for d in inputs for t in d.trajectories}
    if len(shapes) > 1:
        raise CompositionError(f"inputs disagree on frame dimensions: {sorted(shapes)}")

    for role, ds in zip(("D1^S", "D2^T", "D2^T->S", "D1^S->T"), inputs):
        if not len(ds):
            logger.warning("Cross-product cell is empty", extra={"role": role, "dataset": ds.name})

    seen: set = set()
    merged: List[Trajectory] = []
    for ds in inputs:
        for trajectory in ds.trajectories:
            new_id = trajectory.id
            if new_id in seen:
                new_id = f"{ds.name}__{trajectory.id}"
            if new_id in seen:
                raise CompositionError(f"trajectory id {new_id!r} collides even after prefixing")
            seen.add(new_id)
            entry = {"stage": "compose", "source_dataset": ds.name, "source_id": trajectory.id}
            merged.append(dataclasses.replace(trajectory, id=new_id).with_provenance(entry))

    metadata = dict(d1_S.metadata or d2_T.metadata)
    return Dataset(name, tuple(merged), metadata)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def check_trajectory_id(trajectory_id: str) -> str:
    """Trajectory ids name directories under the dataset root; reject anything that escapes it."""

    if (
        not isinstance(trajectory_id, str)
        or trajectory_id in ("", ".", "..")
        or any(sep in trajectory_id for sep in ("/", "\\", "\0"))
    ):
        raise DatasetFormatError(f"Invalid trajectory id: {trajectory_id!r}")
    return trajectory_id


def _action_to_dict(action: Optional[Action]) -> Optional[dict]:
    if action is None:
        return None
    return {"kind": action.kind.value, "pose": action.pose.to_array7(), "gripper": action.gripper}


def _action_from_dict(data: Optional[dict]) -> Optional[Action]:
    if data is None:
        return None
    return Action(ActionKind(data["kind"]), Pose.from_array7(data["pose"]), float(data["gripper"]))


def _frame_record(index: int, frame: Frame) -> dict:
    return {
        "index": index,
        "gripper_pose": frame.gripper_pose.to_array7(),
        "action": _action_to_dict(frame.action),
        "camera": {
            "intrinsics": frame.camera.intrinsics.to_dict(),
            "extrinsics": frame.camera.extrinsics.pose.to_array7(),
        },
        "joint_config": None if frame.joint_config is None else frame.joint_config.to_list(),
        "mask_valid": frame.mask_valid,
        "rgb": f"rgb_{index:05d}.png",
        "mask": f"mask_{index:05d}.png",
        "depth": f"depth_{index:05d}.dpth",
    }


def _write_trajectory(root: Path, trajectory: Trajectory) -> Dict[str, str]:
    directory = root / check_trajectory_id(trajectory.id)
    directory.mkdir(parents=True, exist_ok=True)
    checksums: Dict[str, str] = {}

    def put(name: str, data: bytes) -> None:
        (directory / name).write_bytes(data)
        checksums[f"{trajectory.id}/{name}"] = _sha256(data)

    records = []
    for index, frame in enumerate(trajectory.frames):
        record = _frame_record(index, frame)
        put(record["rgb"], encode_png(frame.rgb))
        put(record["mask"], encode_png(frame.mask))
        put(record["depth"], encode_depth(frame.depth))
        records.append(record)

    document = {
        "id": trajectory.id,
        "robot": trajectory.robot,
        "task": trajectory.task,
        "provenance": list(trajectory.provenance),
        "frames": records,
    }
    put(TRAJECTORY_FILENAME, json.dumps(document, indent=2, sort_keys=True).encode("utf-8"))
    return checksums


def build_manifest(ds: Dataset, checksums: Dict[str, str]) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "name": ds.name,
        "chains": ds.chains,
        "camera_convention": CAMERA_CONVENTION,
        "control_rate_hz": ds.metadata.get("control_rate_hz", CONTROL_RATE_HZ),
        "metadata": ds.metadata,
        "trajectories": [t.id for t in ds.trajectories],
        "files": dict(sorted(checksums.items())),
    }


def write_dataset(ds: Dataset, path: Path, workers: Optional[int] = None) -> Path:
    """Write ``ds`` under ``path``; the manifest is the commit point, written last."""

    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        manifest_file = root / MANIFEST_FILENAME
        if manifest_file.exists():
            manifest_file.unlink()
        per_trajectory = run_parallel(lambda t: _write_trajectory(root, t), ds.trajectories, workers=workers)
        checksums: Dict[str, str] = {}
        for part in per_trajectory:
            checksums.update(part)
        manifest_file.write_text(
            json.dumps(build_manifest(ds, checksums), indent=2, sort_keys=True),
            encoding="utf-8",
        )
    except OSError as exc:
        raise DatasetFormatError(f"Failed to write dataset: {root}") from exc
    logger.info("Wrote dataset", extra={"path": str(root), "trajectories": len(ds)})
    return root


def read_manifest(path: Path) -> Dict[str, Any]:
    manifest_file = Path(path) / MANIFEST_FILENAME
    try:
        data = json.loads(manifest_file.read_text(encoding="utf-8"))
    except OSError as exc:
        raise NotFoundError(f"Manifest not found or unreadable: {manifest_file}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"Manifest is not valid JSON: {manifest_file}") from exc
    if not isinstance(data, dict):
        raise DatasetFormatError(f"Manifest must be a JSON object: {manifest_file}")
    if data.get("format_version") != FORMAT_VERSION:
        raise DatasetVersionError(
            f"Unsupported dataset format_version: {data.get('format_version')} (expected {FORMAT_VERSION})"
        )
    for key in ("name", "trajectories", "files"):
        if key not in data:
            raise DatasetFormatError(f"Manifest missing key '{key}': {manifest_file}")
    if not isinstance(data["trajectories"], list):
        raise DatasetFormatError(f"Manifest trajectories must be a list: {manifest_file}")
    for trajectory_id in data["trajectories"]:
        check_trajectory_id(trajectory_id)
    for relative in data["files"]:
        check_trajectory_id(str(relative).split("/", 1)[0])
        if ".." in str(relative).split("/"):
            raise DatasetFormatError(f"Invalid file path in manifest: {relative!r}")
    return data


def verify_checksums(root: Path, manifest: Dict[str, Any]) -> None:
    for relative, expected in manifest["files"].items():
        file_path = Path(root) / relative
        try:
            data = file_path.read_bytes()
        except OSError as exc:
            raise ChecksumError(f"Dataset file missing: {relative}", relative) from exc
        if _sha256(data) != expected:
            raise ChecksumError(f"Checksum mismatch: {relative}", relative)


def _read_trajectory(root: Path, trajectory_id: str) -> Trajectory:
    directory = root / trajectory_id
    document = json.loads((directory / TRAJECTORY_FILENAME).read_text(encoding="utf-8"))
    frames = []
    for record in document["frames"]:
        camera = Camera(
            CameraIntrinsics.from_dict(record["camera"]["intrinsics"]),
            CameraExtrinsics(Pose.from_array7(record["camera"]["extrinsics"])),
        )
        q = record.get("joint_config")
        frames.append(
            Frame(
                rgb=decode_png((directory / record["rgb"]).read_bytes()),
                depth=decode_depth((directory / record["depth"]).read_bytes()),
                mask=decode_png((directory / record["mask"]).read_bytes(), as_mask=True),
                camera=camera,
                gripper_pose=Pose.from_array7(record["gripper_pose"]),
                action=_action_from_dict(record.get("action")),
                joint_config=None if q is None else JointConfig(q),
                mask_valid=bool(record.get("mask_valid", True)),
            )
        )
    return Trajectory(
        id=document["id"],
        robot=document["robot"],
        task=document["task"],
        frames=tuple(frames),
        provenance=tuple(document.get("provenance", [])),
    )


def read_dataset(path: Path, verify: bool = True, workers: Optional[int] = None) -> Dataset:
    """Load a dataset written by :func:`write_dataset`, checking every file checksum."""

    root = Path(path)
    manifest = read_manifest(root)
    if verify:
        verify_checksums(root, manifest)
    try:
        trajectories = run_parallel(lambda tid: _read_trajectory(root, tid), manifest["trajectories"], workers=workers)
    except (KeyError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"Malformed trajectory file under {root}: {exc}") from exc
    return Dataset(manifest["name"], tuple(trajectories), dict(manifest.get("metadata", {})))


def dataset_digest(path: Path) -> str:
    """SHA-256 of the manifest, which itself carries every file's checksum."""

    return _sha256((Path(path) / MANIFEST_FILENAME).read_bytes())


def new_metadata(**extra: Any) -> Dict[str, Any]:
    metadata: Dict[str, Any] = {"control_rate_hz": CONTROL_RATE_HZ}
    metadata.update(extra)
    return metadata
