"""Robot chain registry: built-in arms plus chains loaded from a JSON text file.

Registry file schema (``format_version`` 1)::

    {
      "format_version": 1,
      "chains": [
        {
          "name": "arm-X",
          "kind": "arm",                       # "arm" (5-8 joints) or "fixture"
          "mount_xyz": [x, y, z], "mount_euler": [rx, ry, rz],
          "tip_xyz": [x, y, z],   "tip_euler": [rx, ry, rz],
          "home": [q0, q1, ...],
          "joints": [{"name": "j1", "axis": [0, 0, 1],
                      "origin_xyz": [...], "origin_euler": [...],
                      "limits": [lo, hi]}, ...],
          "links": [{"capsules": [{"a": [...], "b": [...],
                                   "radius": r, "color": [r, g, b]}]}, ...]
        }
      ]
    }

Euler angles are intrinsic XYZ radians; ``links`` holds one entry per joint
plus the base link.
"""

from __future__ import annotations

import json
import math
import os
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from services.geometry import Pose, Rotation
from services.kinematics import Capsule, JointConfig, JointSpec, KinematicChain, LinkGeometry
from utils.errors import AugmentError, NotFoundError
from utils.logging import get_logger

logger = get_logger(__name__)

REGISTRY_ENV = "XAUG_CHAIN_REGISTRY"
REGISTRY_FORMAT_VERSION = 1

Vec3 = Tuple[float, float, float]
RGB = Tuple[int, int, int]
H = math.pi / 2


class RegistryError(AugmentError):
    """Raised when a chain registry file is unreadable or invalid."""


class JointSchema(BaseModel):
    name: str
    axis: Vec3
    origin_xyz: Vec3 = (0.0, 0.0, 0.0)
    origin_euler: Vec3 = (0.0, 0.0, 0.0)
    limits: Tuple[float, float]

    @field_validator("axis")
    @classmethod
    def _normalise_axis(cls, value: Vec3) -> Vec3:
        norm = math.sqrt(sum(c * c for c in value))
        if norm == 0:
            raise ValueError("joint axis must be nonzero")
        return tuple(c / norm for c in value)  # type: ignore[return-value]


class CapsuleSchema(BaseModel):
    a: Vec3
    b: Vec3
    radius: float = Field(gt=0)
    color: RGB


class LinkSchema(BaseModel):
    capsules: List[CapsuleSchema] = Field(default_factory=list)


class ChainSchema(BaseModel):
    name: str
    kind: Literal["arm", "fixture"] = "arm"
    mount_xyz: Vec3 = (0.0, 0.0, 0.0)
    mount_euler: Vec3 = (0.0, 0.0, 0.0)
    tip_xyz: Vec3 = (0.0, 0.0, 0.0)
    tip_euler: Vec3 = (0.0, 0.0, 0.0)
    home: List[float]
    joints: List[JointSchema]
    links: List[LinkSchema]


class RegistrySchema(BaseModel):
    format_version: int = REGISTRY_FORMAT_VERSION
    chains: List[ChainSchema]


def _pose(xyz: Vec3, euler: Vec3) -> Pose:
    return Pose(Rotation.from_euler(*euler), np.asarray(xyz, dtype=float))


def build_chain(schema: ChainSchema) -> KinematicChain:
    joints = tuple(
        JointSpec(
            name=j.name,
            axis=np.asarray(j.axis),
            origin=_pose(j.origin_xyz, j.origin_euler),
            limits=(float(j.limits[0]), float(j.limits[1])),
        )
        for j in schema.joints
    )
    links = tuple(
        LinkGeometry(tuple(Capsule(np.asarray(c.a), np.asarray(c.b), c.radius, tuple(c.color)) for c in link.capsules))
        for link in schema.links
    )
    return KinematicChain(
        name=schema.name,
        joints=joints,
        links=links,
        tip_offset=_pose(schema.tip_xyz, schema.tip_euler),
        home=JointConfig(np.asarray(schema.home, dtype=float)),
        mount=_pose(schema.mount_xyz, schema.mount_euler),
        kind=schema.kind,
    )


def _cap(a: Vec3, b: Vec3, radius: float, color: RGB) -> dict:
    return {"a": a, "b": b, "radius": radius, "color": color}


def _joint(name: str, xyz: Vec3, euler: Vec3, limits: Tuple[float, float], axis: Vec3 = (0.0, 0.0, 1.0)) -> dict:
    return {"name": name, "axis": axis, "origin_xyz": xyz, "origin_euler": euler, "limits": limits}


_MOUNT = (-0.45, 0.0, 0.75)

_WHITE, _CHARCOAL = (236, 236, 232), (44, 44, 48)
_SILVER, _STEEL_BLUE = (192, 196, 202), (72, 112, 164)
_RED, _GRAPHITE = (188, 42, 40), (62, 62, 66)
_BLACK, _PEWTER = (38, 38, 42), (124, 124, 134)

# Stand-ins for the four arms of the paired-image generator; link lengths loosely
# follow the real robots so silhouettes differ.
BUILTIN_REGISTRY: dict = {
    "format_version": REGISTRY_FORMAT_VERSION,
    "chains": [
        {
            "name": "arm-A",
            "mount_xyz": _MOUNT,
            "tip_xyz": (0.0, 0.0, 0.2104),
            "home": [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785],
            "joints": [
                _joint("a1", (0.0, 0.0, 0.333), (0.0, 0.0, 0.0), (-2.8973, 2.8973)),
                _joint("a2", (0.0, 0.0, 0.0), (-H, 0.0, 0.0), (-1.7628, 1.7628)),
                _joint("a3", (0.0, -0.316, 0.0), (H, 0.0, 0.0), (-2.8973, 2.8973)),
                _joint("a4", (0.0825, 0.0, 0.0), (H, 0.0, 0.0), (-3.0718, -0.0698)),
                _joint("a5", (-0.0825, 0.384, 0.0), (-H, 0.0, 0.0), (-2.8973, 2.8973)),
                _joint("a6", (0.0, 0.0, 0.0), (H, 0.0, 0.0), (-0.0175, 3.7525)),
                _joint("a7", (0.088, 0.0, 0.0), (H, 0.0, 0.0), (-2.8973, 2.8973)),
            ],
            "links": [
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.2), 0.075, _WHITE)]},
                {"capsules": [_cap((0, 0, -0.14), (0, 0, 0), 0.065, _WHITE)]},
                {"capsules": [_cap((0, 0, -0.06), (0, 0, 0.06), 0.065, _WHITE), _cap((0, 0, 0), (0, -0.18, 0), 0.06, _WHITE)]},
                {"capsules": [_cap((0, 0, -0.14), (0, 0, 0), 0.06, _WHITE), _cap((0.0825, 0, -0.05), (0.0825, 0, 0.05), 0.055, _CHARCOAL)]},
                {"capsules": [_cap((0, 0, 0), (-0.0825, 0.2, 0), 0.055, _WHITE), _cap((-0.0825, 0.2, 0), (-0.0825, 0.384, 0), 0.05, _WHITE)]},
                {"capsules": [_cap((0, 0, -0.06), (0, 0, 0.06), 0.05, _WHITE)]},
                {"capsules": [_cap((0, 0, -0.04), (0, 0, 0.04), 0.05, _CHARCOAL), _cap((0, 0, 0), (0.088, 0, 0), 0.045, _WHITE)]},
                {
                    "capsules": [
                        _cap((0, 0, 0), (0, 0, 0.107), 0.04, _CHARCOAL),
                        _cap((0, -0.09, 0.13), (0, 0.09, 0.13), 0.028, _WHITE),
                        _cap((0, 0.035, 0.14), (0, 0.035, 0.2), 0.012, _CHARCOAL),
                        _cap((0, -0.035, 0.14), (0, -0.035, 0.2), 0.012, _CHARCOAL),
                    ]
                },
            ],
        },
        {
            "name": "arm-B",
            "mount_xyz": _MOUNT,
            "tip_xyz": (0.0, 0.2323, 0.0),
            "tip_euler": (-H, 0.0, 0.0),
            "home": [0.0, -1.2, 1.5, -1.87, -1.5708, 0.0],
            "joints": [
                _joint("b1", (0.0, 0.0, 0.089159), (0.0, 0.0, 0.0), (-6.2, 6.2)),
                _joint("b2", (0.0, 0.13585, 0.0), (0.0, H, 0.0), (-6.2, 6.2), axis=(0.0, 1.0, 0.0)),
                _joint("b3", (0.0, -0.1197, 0.425), (0.0, 0.0, 0.0), (-3.1, 3.1), axis=(0.0, 1.0, 0.0)),
                _joint("b4", (0.0, 0.0, 0.39225), (0.0, H, 0.0), (-6.2, 6.2), axis=(0.0, 1.0, 0.0)),
                _joint("b5", (0.0, 0.093, 0.0), (0.0, 0.0, 0.0), (-6.2, 6.2)),
                _joint("b6", (0.0, 0.0, 0.09465), (0.0, 0.0, 0.0), (-6.2, 6.2), axis=(0.0, 1.0, 0.0)),
            ],
            "links": [
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.085), 0.075, _SILVER)]},
                {"capsules": [_cap((0, 0, 0), (0, 0.136, 0), 0.062, _STEEL_BLUE)]},
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.425), 0.055, _SILVER), _cap((0, 0, 0.425), (0, -0.1197, 0.425), 0.05, _STEEL_BLUE)]},
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.39225), 0.045, _SILVER)]},
                {"capsules": [_cap((0, 0, 0), (0, 0.093, 0), 0.042, _STEEL_BLUE)]},
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.09465), 0.042, _STEEL_BLUE)]},
                {
                    "capsules": [
                        _cap((0, 0, 0), (0, 0.0823, 0), 0.038, _SILVER),
                        _cap((-0.05, 0.13, 0), (0.05, 0.13, 0), 0.03, _CHARCOAL),
                        _cap((0.03, 0.14, 0), (0.03, 0.23, 0), 0.012, _CHARCOAL),
                        _cap((-0.03, 0.14, 0), (-0.03, 0.23, 0), 0.012, _CHARCOAL),
                    ]
                },
            ],
        },
        {
            "name": "arm-C",
            "mount_xyz": _MOUNT,
            "tip_xyz": (0.0, 0.0, 0.14),
            "home": [0.0, -0.6, 0.0, 1.4, 0.0, 0.8, 0.0],
            "joints": [
                _joint("c1", (0.0, 0.0, 0.317), (0.0, 0.0, 0.0), (-3.05, 3.05)),
                _joint("c2", (0.081, 0.0, 0.0), (-H, 0.0, 0.0), (-3.8, 2.27)),
                _joint("c3", (0.0, -0.4, 0.0), (H, 0.0, 0.0), (-3.04, 3.04)),
                _joint("c4", (0.0, 0.0, 0.0), (-H, 0.0, 0.0), (-3.04, 3.04)),
                _joint("c5", (0.0, -0.4, 0.0), (H, 0.0, 0.0), (-2.98, 2.98)),
                _joint("c6", (0.0, 0.0, 0.0), (-H, 0.0, 0.0), (-2.98, 2.98)),
                _joint("c7", (0.0, -0.14, 0.0), (H, 0.0, 0.0), (-4.7, 4.7)),
            ],
            "links": [
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.25), 0.08, _GRAPHITE)]},
                {"capsules": [_cap((0, 0, -0.05), (0, 0, 0), 0.07, _RED), _cap((0, 0, 0), (0.081, 0, 0), 0.065, _RED)]},
                {"capsules": [_cap((0, 0, -0.07), (0, 0, 0.07), 0.065, _RED), _cap((0, 0, 0), (0, -0.3, 0), 0.06, _RED)]},
                {"capsules": [_cap((0, 0, -0.1), (0, 0, 0), 0.058, _RED)]},
                {"capsules": [_cap((0, 0, -0.06), (0, 0, 0.06), 0.058, _GRAPHITE), _cap((0, 0, 0), (0, -0.3, 0), 0.05, _RED)]},
                {"capsules": [_cap((0, 0, -0.1), (0, 0, 0), 0.048, _RED)]},
                {"capsules": [_cap((0, 0, -0.05), (0, 0, 0.05), 0.048, _GRAPHITE), _cap((0, 0, 0), (0, -0.14, 0), 0.042, _RED)]},
                {
                    "capsules": [
                        _cap((0, 0, 0), (0, 0, 0.06), 0.04, _GRAPHITE),
                        _cap((-0.045, 0, 0.075), (0.045, 0, 0.075), 0.025, _GRAPHITE),
                        _cap((0.03, 0, 0.08), (0.03, 0, 0.14), 0.011, _SILVER),
                        _cap((-0.03, 0, 0.08), (-0.03, 0, 0.14), 0.011, _SILVER),
                    ]
                },
            ],
        },
        {
            "name": "arm-D",
            "mount_xyz": _MOUNT,
            "tip_xyz": (0.0, 0.0, 0.16),
            "home": [0.0, -0.5, 1.3, 0.0, 1.0, 0.0],
            "joints": [
                _joint("d1", (0.0, 0.0, 0.2755), (0.0, 0.0, 0.0), (-6.2, 6.2)),
                _joint("d2", (0.0, 0.0, 0.0), (-H, 0.0, 0.0), (-2.35, 2.35)),
                _joint("d3", (0.0, -0.41, 0.0), (0.0, 0.0, 0.0), (-2.6, 2.6)),
                _joint("d4", (0.0, -0.05, 0.0), (H, 0.0, 0.0), (-6.2, 6.2)),
                _joint("d5", (0.0, 0.0, 0.2073), (-H, 0.0, 0.0), (-2.5, 2.5)),
                _joint("d6", (0.0, -0.1, 0.0), (H, 0.0, 0.0), (-6.2, 6.2)),
            ],
            "links": [
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.2), 0.06, _BLACK)]},
                {"capsules": [_cap((0, 0, -0.08), (0, 0, 0), 0.055, _BLACK)]},
                {"capsules": [_cap((0, 0, -0.06), (0, 0, 0.06), 0.055, _PEWTER), _cap((0, 0, 0), (0, -0.41, 0), 0.045, _BLACK)]},
                {"capsules": [_cap((0, 0, -0.05), (0, 0, 0.05), 0.05, _PEWTER), _cap((0, 0, 0), (0, -0.05, 0), 0.045, _BLACK)]},
                {"capsules": [_cap((0, 0, 0), (0, 0, 0.2073), 0.038, _BLACK)]},
                {"capsules": [_cap((0, 0, -0.045), (0, 0, 0.045), 0.04, _PEWTER), _cap((0, 0, 0), (0, -0.1, 0), 0.035, _BLACK)]},
                {
                    "capsules": [
                        _cap((0, 0, 0), (0, 0, 0.06), 0.035, _BLACK),
                        _cap((-0.04, 0, 0.08), (0.04, 0, 0.08), 0.03, _BLACK),
                        _cap((0.03, 0, 0.09), (0.03, 0, 0.16), 0.01, _PEWTER),
                        _cap((-0.03, 0.02, 0.09), (-0.03, 0.02, 0.16), 0.01, _PEWTER),
                        _cap((-0.03, -0.02, 0.09), (-0.03, -0.02, 0.16), 0.01, _PEWTER),
                    ]
                },
            ],
        },
        {
            "name": "planar-2",
            "kind": "fixture",
            "tip_xyz": (0.2, 0.0, 0.0),
            "home": [0.0, 0.0],
            "joints": [
                _joint("p1", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (-math.pi, math.pi)),
                _joint("p2", (0.3, 0.0, 0.0), (0.0, 0.0, 0.0), (-math.pi, math.pi)),
            ],
            "links": [
                {"capsules": [_cap((0, 0, -0.02), (0, 0, 0.02), 0.03, _GRAPHITE)]},
                {"capsules": [_cap((0, 0, 0), (0.3, 0, 0), 0.02, _SILVER)]},
                {"capsules": [_cap((0, 0, 0), (0.2, 0, 0), 0.02, _SILVER)]},
            ],
        },
    ],
}


def parse_registry(data: dict, source: str = "<memory>") -> Dict[str, KinematicChain]:
    try:
        schema = RegistrySchema.model_validate(data)
    except ValidationError as exc:
        raise RegistryError(f"Invalid chain registry {source}: {exc}") from exc
    if schema.format_version != REGISTRY_FORMAT_VERSION:
        raise RegistryError(f"Unsupported chain registry version {schema.format_version} in {source}")

    chains: Dict[str, KinematicChain] = {}
    for chain_schema in schema.chains:
        try:
            chains[chain_schema.name] = build_chain(chain_schema)
        except ValueError as exc:
            raise RegistryError(f"Invalid chain {chain_schema.name} in {source}: {exc}") from exc
    return chains


def read_registry_file(path: Path) -> Dict[str, KinematicChain]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise RegistryError(f"Chain registry unreadable: {path}") from exc
    except json.JSONDecodeError as exc:
        raise RegistryError(f"Chain registry is not valid JSON: {path}") from exc
    return parse_registry(data, str(path))


@lru_cache
def _builtin_chains() -> Dict[str, KinematicChain]:
    return parse_registry(BUILTIN_REGISTRY, "<builtin>")


def load_registry(path: Optional[Path] = None) -> Dict[str, KinematicChain]:
    """Built-in chains, extended (and overridden by name) from a registry file.

    ``path`` falls back to the ``XAUG_CHAIN_REGISTRY`` environment variable.
    """

    chains = dict(_builtin_chains())
    env_path = os.environ.get(REGISTRY_ENV)
    source = path or (Path(env_path) if env_path else None)
    if source is not None:
        extra = read_registry_file(source)
        logger.info("Loaded chain registry", extra={"path": str(source), "chains": sorted(extra)})
        chains.update(extra)
    return chains


def get_chain(name: str, path: Optional[Path] = None) -> KinematicChain:
    chains = load_registry(path)
    try:
        return chains[name]
    except KeyError:
        raise NotFoundError(f"Unknown robot chain {name!r}; registered: {', '.join(sorted(chains))}") from None
