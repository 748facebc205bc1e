"""Run configuration for the augmentation engine."""

import json
import math
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from utils.errors import ConfigError

Vec3 = Tuple[float, float, float]


class ViewMode(str, Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


class ViAugConfig(BaseModel):
    """Box ranges for camera-frame perturbations (symmetric, +/- value)."""

    tx_range: float = 0.25
    ty_range: float = 0.1
    tz_range: float = 0.25
    euler_range: float = 0.1
    mode: ViewMode = ViewMode.INCONSISTENT
    fill_holes: bool = True

    @field_validator("tx_range", "ty_range", "tz_range", "euler_range")
    @classmethod
    def _validate_range(cls, value: float) -> float:
        if value < 0:
            raise ValueError("perturbation ranges must be nonnegative")
        return value


class RobotPoseSamplerConfig(BaseModel):
    box_lo: Vec3 = (-0.25, -0.25, 0.6)
    box_hi: Vec3 = (0.25, 0.25, 1.3)
    zenith_mean: float = math.pi
    zenith_std: float = math.pi / 3.5
    sample_roll: bool = True

    @field_validator("zenith_std")
    @classmethod
    def _validate_std(cls, value: float) -> float:
        if value < 0:
            raise ValueError("zenith_std must be nonnegative")
        return value

    @model_validator(mode="after")
    def _validate_box(self) -> "RobotPoseSamplerConfig":
        if any(lo > hi for lo, hi in zip(self.box_lo, self.box_hi)):
            raise ValueError("box_lo must not exceed box_hi on any axis")
        return self


class CameraAnchor(BaseModel):
    """A preset view expressed relative to the gripper position."""

    name: str
    radius: float
    zenith: float
    azimuth: float


def _default_anchors() -> List[CameraAnchor]:
    return [
        CameraAnchor(name="side", radius=0.9, zenith=1.2, azimuth=math.pi / 2),
        CameraAnchor(name="front", radius=1.0, zenith=1.0, azimuth=0.0),
        CameraAnchor(name="over-shoulder", radius=0.8, zenith=0.6, azimuth=-2.4),
    ]


class CameraSamplerConfig(BaseModel):
    radius_mean: float = 0.85
    radius_std: float = 0.2
    min_radius: float = 0.2
    zenith_mean: float = math.pi / 4
    zenith_std: float = math.pi / 2.2
    zenith_max: float = math.pi / 2
    azimuth_half_range: float = math.pi * 3.7 / 4
    fov_range: Tuple[float, float] = (40.0, 70.0)
    translation_noise: float = 0.02
    rotation_noise: float = 0.02
    anchor_fraction: float = 0.0
    anchors: List[CameraAnchor] = Field(default_factory=_default_anchors)

    @field_validator("radius_std", "zenith_std", "translation_noise", "rotation_noise")
    @classmethod
    def _validate_nonnegative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("noise and sigma values must be nonnegative")
        return value

    @field_validator("fov_range")
    @classmethod
    def _validate_fov(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not 10.0 < lo <= hi < 170.0:
            raise ValueError("fov_range must satisfy 10 < lo <= hi < 170")
        return value

    @field_validator("anchor_fraction")
    @classmethod
    def _validate_fraction(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("anchor_fraction must be within [0, 1]")
        return value


class IKConfig(BaseModel):
    damping: float = 0.05
    max_step: float = 0.2
    position_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-3
    max_iterations: int = 200
    restarts: int = 8
    restart_seed: int = 0x1C0FFEE
    exhaustive: bool = False


class RenderConfig(BaseModel):
    light_direction: Vec3 = (0.35, -0.25, 0.9)
    ambient: float = 0.35
    diffuse: float = 0.65
    background_color: Tuple[int, int, int] = (0, 0, 0)
    far_plane: float = 6.0


class SceneConfig(BaseModel):
    table_height: float = 0.75
    table_extent: float = 1.2
    checker_size: float = 0.1
    table_colors: Tuple[Tuple[int, int, int], Tuple[int, int, int]] = ((196, 164, 120), (150, 118, 84))
    wall_distance: float = 1.6
    wall_color: Tuple[int, int, int] = (206, 210, 214)
    sky_color: Tuple[int, int, int] = (90, 96, 104)


class RoAugConfig(BaseModel):
    brightness_range: int = 30
    segmenter_cmd: Optional[List[str]] = None
    translator_cmd: Optional[List[str]] = None
    inpainter_cmd: Optional[List[str]] = None

    @field_validator("brightness_range")
    @classmethod
    def _validate_brightness(cls, value: int) -> int:
        if value < 0:
            raise ValueError("brightness_range must be nonnegative")
        return value


class PairedConfig(BaseModel):
    cameras_per_pose: int = 5
    brightness_range: int = 40
    zoom_range: Tuple[float, float] = (0.9, 1.1)


class DemoConfig(BaseModel):
    box_lo: Vec3 = (-0.2, -0.2, 0.9)
    box_hi: Vec3 = (0.2, 0.2, 1.15)
    zenith_std: float = 0.25
    camera_eye: Vec3 = (0.35, 1.1, 1.35)
    camera_target: Vec3 = (-0.05, 0.0, 0.95)
    camera_fov: float = 55.0
    grasp_fraction: float = 0.5
    max_attempts: int = 20
    control_rate_hz: float = 15.0


class Settings(BaseSettings):
    """Centralised run configuration."""

    log_level: str = "INFO"
    log_format: str = "text"

    master_seed: int = 0
    workers: int = 1
    parallel_backend: str = "threading"
    strict: bool = False
    chain_registry: Optional[Path] = None
    image_width: int = 256
    image_height: int = 256

    robot_pose: RobotPoseSamplerConfig = Field(default_factory=RobotPoseSamplerConfig)
    camera: CameraSamplerConfig = Field(default_factory=CameraSamplerConfig)
    viaug: ViAugConfig = Field(default_factory=ViAugConfig)
    roaug: RoAugConfig = Field(default_factory=RoAugConfig)
    paired: PairedConfig = Field(default_factory=PairedConfig)
    ik: IKConfig = Field(default_factory=IKConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    demo: DemoConfig = Field(default_factory=DemoConfig)
    synthesizer_cmd: Optional[List[str]] = None

    @field_validator("workers")
    @classmethod
    def _validate_workers(cls, value: int) -> int:
        if value < 1:
            raise ValueError("workers must be at least 1")
        return value

    @field_validator("parallel_backend")
    @classmethod
    def _validate_backend(cls, value: str) -> str:
        if value not in {"threading", "loky", "sequential"}:
            raise ValueError("parallel_backend must be threading, loky or sequential")
        return value

    @field_validator("chain_registry")
    @classmethod
    def _validate_registry(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not value.exists():
            raise ValueError(f"chain registry not found: {value}")
        return value

    model_config = SettingsConfigDict(
        env_prefix="XAUG_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


RunConfig = Settings

# Execution-only knobs; they must never change what a run produces.
_EXECUTION_FIELDS = {"workers", "parallel_backend", "chain_registry", "log_level", "log_format"}


@lru_cache
def get_settings() -> Settings:
    """Return a cached Settings instance."""

    return Settings()


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """Build a RunConfig from an optional JSON file plus CLI overrides.

    Flags win over the file, the file wins over the environment.
    """

    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"Config file unreadable: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file is not valid JSON: {path}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config file must hold a JSON object: {path}")

    data = _deep_merge(data, overrides or {})
    try:
        return Settings(**data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def provenance_config(settings: Settings) -> Dict[str, Any]:
    """Config as recorded in dataset provenance (execution knobs stripped)."""

    return settings.model_dump(mode="json", exclude=_EXECUTION_FIELDS)
