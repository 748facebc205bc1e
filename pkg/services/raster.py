"""Depth-buffered capsule renderer, compositing and raster I/O.

Every link capsule is intersected analytically with one camera ray per pixel
centre. Rays carry a unit z component, so the ray parameter ``t`` is the
camera-frame depth directly.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageOps, UnidentifiedImageError
from skimage.color import hsv2rgb, rgb2hsv

from config import RenderConfig
from services.camera import Camera, CameraIntrinsics, pixel_rays
from services.geometry import Action, Pose
from services.kinematics import Capsule, JointConfig, KinematicChain, forward_kinematics, link_frames
from services.sampler import SeedPath, derive_stream, sample_brightness_delta
from utils.errors import AugmentError
from utils.logging import get_logger

logger = get_logger(__name__)

DEPTH_MAGIC = b"DPTH"
_DEPTH_HEADER = struct.Struct("<4sHH")
_NEAR = 1e-6
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


class DimensionMismatchError(AugmentError):
    """Raised when raster layers or plates disagree in size."""


class EmptyCorpusError(AugmentError):
    """Raised when a background corpus holds no decodable image."""


class DepthFormatError(AugmentError):
    """Raised when a depth blob has a bad header or length."""


@dataclass(frozen=True, slots=True, eq=False)
class Frame:
    """One observation plus the robot state it was taken at.

    ``gripper_pose`` is the tool tip in the robot's base frame.
    """

    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    camera: Camera
    gripper_pose: Pose
    action: Optional[Action] = None
    joint_config: Optional[JointConfig] = None
    mask_valid: bool = True

    def __post_init__(self) -> None:
        rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        depth = np.ascontiguousarray(self.depth, dtype=np.float32)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DimensionMismatchError(f"rgb must be HxWx3, got {rgb.shape}")
        if depth.shape != rgb.shape[:2] or mask.shape != rgb.shape[:2]:
            raise DimensionMismatchError("rgb, depth and mask must share dimensions")
        if rgb.shape[:2] != self.camera.shape:
            raise DimensionMismatchError(f"camera is {self.camera.shape}, layers are {rgb.shape[:2]}")
        if np.any(depth < 0) or not np.all(np.isfinite(depth)):
            raise ValueError("depth must be finite and nonnegative")
        for name, value in (("rgb", rgb), ("depth", depth), ("mask", mask)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.camera.shape

    def replace(self, **changes) -> "Frame":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return False
        same_q = (self.joint_config is None) == (other.joint_config is None) and (
            self.joint_config is None or np.array_equal(self.joint_config.angles, other.joint_config.angles)
        )
        return (
            np.array_equal(self.rgb, other.rgb)
            and self.depth.tobytes() == other.depth.tobytes()
            and np.array_equal(self.mask, other.mask)
            and self.camera == other.camera
            and self.gripper_pose == other.gripper_pose
            and self.action == other.action
            and same_q
            and self.mask_valid == other.mask_valid
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True, eq=False)
class BackgroundPlate:
    """Background image; ``depth`` None means everything sits at the far plane."""

    rgb: np.ndarray
    depth: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DimensionMismatchError(f"plate rgb must be HxWx3, got {rgb.shape}")
        object.__setattr__(self, "rgb", rgb)
        if self.depth is not None:
            depth = np.ascontiguousarray(self.depth, dtype=np.float32)
            if depth.shape != rgb.shape[:2]:
                raise DimensionMismatchError("plate depth must match plate rgb")
            object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rgb.shape[0], self.rgb.shape[1]

    def depth_or(self, far_plane: float) -> np.ndarray:
        if self.depth is None:
            return np.full(self.shape, far_plane, dtype=np.float32)
        return self.depth


@dataclass(slots=True)
class _Buffers:
    zbuf: np.ndarray
    rgb: np.ndarray
    hit: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.hit = np.zeros(self.zbuf.shape, dtype=bool)


def _capsule_hits(rays: np.ndarray, a: np.ndarray, b: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest positive ray parameter (inf on miss) and unit normals."""

    shape = rays.shape[:-1]
    t_best = np.full(shape, np.inf)
    normals = np.zeros(shape + (3,))
    dd = np.einsum("...i,...i->...", rays, rays)
    r2 = radius * radius

    ba = b - a
    baba = float(ba @ ba)
    if baba > 1e-12:
        oa = -a
        bard = rays @ ba
        baoa = float(ba @ oa)
        rdoa = rays @ oa
        qa = baba * dd - bard * bard
        qb = baba * rdoa - baoa * bard
        qc = baba * float(oa @ oa) - baoa * baoa - r2 * baba
        h = qb * qb - qa * qc
        usable = (h >= 0) & (qa > 1e-12)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (-qb - np.sqrt(np.where(usable, h, 0.0))) / np.where(usable, qa, 1.0)
        y = baoa + t * bard
        ok = usable & (t > _NEAR) & (y > 0) & (y < baba)
        if ok.any():
            p = t[ok][:, None] * rays[ok]
            n = (p - a) - (y[ok] / baba)[:, None] * ba
            normals[ok] = n / np.linalg.norm(n, axis=-1, keepdims=True)
            t_best[ok] = t[ok]

    for centre in (a, b):
        oc = -centre
        half_b = rays @ oc
        h = half_b * half_b - dd * (float(oc @ oc) - r2)
        with np.errstate(invalid="ignore"):
            t = (-half_b - np.sqrt(np.where(h >= 0, h, 0.0))) / dd
        ok = (h >= 0) & (t > _NEAR) & (t < t_best)
        if ok.any():
            normals[ok] = (t[ok][:, None] * rays[ok] - centre) / radius
            t_best[ok] = t[ok]
        if baba <= 1e-12:
            break
    return t_best, normals


def _screen_rect(intr: CameraIntrinsics, a: np.ndarray, b: np.ndarray, radius: float) -> Optional[Tuple[int, int, int, int]]:
    lo = np.minimum(a, b) - radius
    hi = np.maximum(a, b) + radius
    if hi[2] <= _NEAR:
        return None
    if lo[2] <= 1e-3:
        return 0, intr.height, 0, intr.width
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    u = intr.fx * corners[:, 0] / corners[:, 2] + intr.cx
    v = intr.fy * corners[:, 1] / corners[:, 2] + intr.cy
    c0 = max(int(np.floor(u.min())) - 1, 0)
    c1 = min(int(np.ceil(u.max())) + 1, intr.width)
    r0 = max(int(np.floor(v.min())) - 1, 0)
    r1 = min(int(np.ceil(v.max())) + 1, intr.height)
    if c0 >= c1 or r0 >= r1:
        return None
    return r0, r1, c0, c1


def rasterize_capsules(
    capsules: Iterable[Capsule],
    camera: Camera,
    cfg: Optional[RenderConfig] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render world-frame capsules; returns (rgb uint8, depth float, hit mask).

    Depth is ``inf`` where nothing was hit.
    """

    cfg = cfg or RenderConfig()
    intr = camera.intrinsics
    rays = pixel_rays(intr)
    world_to_cam = camera.extrinsics.pose.inverse()
    light = np.asarray(cfg.light_direction, dtype=float)
    light_cam = camera.extrinsics.pose.rotation.inverse().apply(light / np.linalg.norm(light))

    buffers = _Buffers(
        zbuf=np.full(camera.shape, np.inf),
        rgb=np.zeros(camera.shape + (3,)),
    )
    for capsule in capsules:
        a = world_to_cam.transform_point(capsule.a)
        b = world_to_cam.transform_point(capsule.b)
        rect = _screen_rect(intr, a, b, capsule.radius)
        if rect is None:
            continue
        r0, r1, c0, c1 = rect
        t, normals = _capsule_hits(rays[r0:r1, c0:c1], a, b, capsule.radius)
        zview = buffers.zbuf[r0:r1, c0:c1]
        closer = t < zview
        if not closer.any():
            continue
        shade = cfg.ambient + cfg.diffuse * np.clip(normals[closer] @ light_cam, 0.0, None)
        zview[closer] = t[closer]
        buffers.rgb[r0:r1, c0:c1][closer] = np.asarray(capsule.color, dtype=float) * shade[:, None]
        buffers.hit[r0:r1, c0:c1][closer] = True

    rgb = np.clip(np.floor(buffers.rgb + 0.5), 0, 255).astype(np.uint8)
    return rgb, buffers.zbuf, buffers.hit


def chain_capsules(chain: KinematicChain, q: JointConfig) -> List[Capsule]:
    """Every link capsule of ``chain`` at ``q``, in world coordinates."""

    frames = link_frames(chain, q)
    world: List[Capsule] = []
    for link, frame in zip(chain.links, frames):
        rot, trans = frame[:3, :3], frame[:3, 3]
        for capsule in link.capsules:
            world.append(Capsule(rot @ capsule.a + trans, rot @ capsule.b + trans, capsule.radius, capsule.color))
    return world


def render(
    chain: KinematicChain,
    q: JointConfig,
    camera: Camera,
    cfg: Optional[RenderConfig] = None,
    plate: Optional[BackgroundPlate] = None,
    occluder: Optional[np.ndarray] = None,
) -> Frame:
    """Render ``chain`` at ``q``; over ``plate`` when one is given.

    The mask holds robot pixels nearer than the background. Without a plate the
    background is ``cfg.background_color`` with depth 0. ``occluder`` overrides
    the depth robot pixels are tested against.
    """

    cfg = cfg or RenderConfig()
    rgb, zbuf, hit = rasterize_capsules(chain_capsules(chain, q), camera, cfg)

    if plate is None:
        background_rgb = np.broadcast_to(np.asarray(cfg.background_color, dtype=np.uint8), rgb.shape)
        background_depth = np.zeros(camera.shape, dtype=np.float32)
        mask = hit if occluder is None else hit & (zbuf < occluder)
    else:
        if plate.shape != camera.shape:
            raise DimensionMismatchError(f"plate is {plate.shape}, camera is {camera.shape}")
        background_rgb = plate.rgb
        if occluder is None:
            occluder = plate.depth_or(cfg.far_plane)
        mask = hit & (zbuf < occluder)
        background_depth = plate.depth if plate.depth is not None else np.zeros(camera.shape, dtype=np.float32)

    out_rgb = np.where(mask[..., None], rgb, background_rgb)
    depth = np.where(mask, zbuf, background_depth).astype(np.float32)
    return Frame(
        rgb=out_rgb,
        depth=depth,
        mask=mask,
        camera=camera,
        gripper_pose=forward_kinematics(chain, q).tip,
        joint_config=q,
    )


def brightness_shift(rgb: np.ndarray, delta: int) -> np.ndarray:
    """Shift the HSV value channel by ``delta`` (8-bit units), clamped.

    Conversion back to 8 bits rounds half up.
    """

    pixels = np.asarray(rgb, dtype=np.uint8)
    flat = pixels.reshape(-1, 1, 3)
    if flat.shape[0] == 0:
        return pixels.copy()
    hsv = rgb2hsv(flat)
    hsv[..., 2] = np.clip(hsv[..., 2] + delta / 255.0, 0.0, 1.0)
    out = np.floor(hsv2rgb(hsv) * 255.0 + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8).reshape(pixels.shape)


def composite(fg: Frame, plate: BackgroundPlate, brightness_delta: int) -> Frame:
    """Paste the masked pixels of ``fg`` over ``plate``.

    Robot pixels get the brightness shift; poses and actions are carried over.
    """

    if fg.shape != plate.shape:
        raise DimensionMismatchError(f"foreground is {fg.shape}, plate is {plate.shape}")
    mask = fg.mask
    rgb = plate.rgb.copy()
    if brightness_delta == 0:
        rgb[mask] = fg.rgb[mask]
    else:
        rgb[mask] = brightness_shift(fg.rgb[mask], brightness_delta)
    depth = np.zeros(fg.shape, dtype=np.float32) if plate.depth is None else plate.depth.copy()
    depth[mask] = fg.depth[mask]
    return fg.replace(rgb=rgb, depth=depth)


def load_background_corpus(corpus_dir: Path) -> List[Tuple[str, Image.Image]]:
    """Decodable images of ``corpus_dir`` in sorted filename order."""

    images: List[Tuple[str, Image.Image]] = []
    for path in sorted(Path(corpus_dir).iterdir()):
        if not path.is_file() or path.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(path) as img:
                images.append((path.name, img.convert("RGB")))
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning("Skipping undecodable background", extra={"path": str(path), "error": str(exc)})
    if not images:
        raise EmptyCorpusError(f"No decodable background images in {corpus_dir}")
    return images


def fit_plate(image: Image.Image, width: int, height: int) -> BackgroundPlate:
    """Aspect-fill, centre-crop and bilinear-resize an image to a plate."""

    fitted = ImageOps.fit(image, (width, height), method=Image.Resampling.BILINEAR, centering=(0.5, 0.5))
    return BackgroundPlate(np.asarray(fitted, dtype=np.uint8))


def paste_on_background_corpus(
    frames: Sequence[Frame],
    corpus_dir: Path,
    seed_path: SeedPath,
    trajectory_id: str = "",
    brightness_range: int = 0,
) -> List[Frame]:
    """Composite each frame over a corpus image chosen by its own stream."""

    corpus = load_background_corpus(corpus_dir)

    @lru_cache(maxsize=None)
    def plate_for(index: int, width: int, height: int) -> BackgroundPlate:
        return fit_plate(corpus[index][1], width, height)

    pasted = []
    for j, frame in enumerate(frames):
        stream = derive_stream(seed_path.extend("background", trajectory_id, j))
        choice = int(stream.integers(len(corpus)))
        delta = sample_brightness_delta(brightness_range, stream)
        height, width = frame.shape
        pasted.append(composite(frame, plate_for(choice, width, height), delta))
        logger.debug("Pasted background", extra={"frame": j, "background": corpus[choice][0], "delta": delta})
    return pasted


def zoom_frame(frame: Frame, factor: float) -> Frame:
    """Centre zoom by ``factor`` (>1 zooms in); the field of view shrinks to match.

    RGB is resampled bilinearly, depth and mask by nearest neighbour; pixels
    with no source become black with invalid depth.
    """

    if factor <= 0:
        raise ValueError("zoom factor must be positive")
    intr = frame.camera.intrinsics
    height, width = frame.shape
    inv = 1.0 / factor
    affine = (inv, 0.0, intr.cx * (1.0 - inv), 0.0, inv, intr.cy * (1.0 - inv))
    size = (width, height)

    rgb = Image.fromarray(frame.rgb).transform(size, Image.Transform.AFFINE, affine, resample=Image.Resampling.BILINEAR)
    depth = Image.fromarray(frame.depth).transform(size, Image.Transform.AFFINE, affine, resample=Image.Resampling.NEAREST)
    mask = Image.fromarray(frame.mask.astype(np.uint8) * 255).transform(
        size, Image.Transform.AFFINE, affine, resample=Image.Resampling.NEAREST
    )

    half = np.arctan(np.tan(np.radians(intr.fov_deg) / 2.0) / factor)
    zoomed = CameraIntrinsics(width, height, float(np.degrees(2.0 * half)))
    return frame.replace(
        rgb=np.asarray(rgb, dtype=np.uint8),
        depth=np.asarray(depth, dtype=np.float32),
        mask=np.asarray(mask) > 127,
        camera=Camera(zoomed, frame.camera.extrinsics),
    )


def encode_depth(depth: np.ndarray) -> bytes:
    height, width = depth.shape
    return _DEPTH_HEADER.pack(DEPTH_MAGIC, width, height) + np.ascontiguousarray(depth, dtype="<f4").tobytes()


def decode_depth(blob: bytes) -> np.ndarray:
    if len(blob) < _DEPTH_HEADER.size:
        raise DepthFormatError("depth blob shorter than its header")
    magic, width, height = _DEPTH_HEADER.unpack_from(blob)
    if magic != DEPTH_MAGIC:
        raise DepthFormatError(f"bad depth magic {magic!r}")
    body = blob[_DEPTH_HEADER.size:]
    if len(body) != 4 * width * height:
        raise DepthFormatError(f"depth body holds {len(body)} bytes, expected {4 * width * height}")
    return np.frombuffer(body, dtype="<f4").reshape(height, width).astype(np.float32)


def write_depth(path: Path, depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_depth(depth))


def read_depth(path: Path) -> np.ndarray:
    return decode_depth(Path(path).read_bytes())


def encode_png(array: np.ndarray) -> bytes:
    """PNG bytes for an RGB image or a boolean mask (stored 0/255)."""

    arr = np.asarray(array)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    buffer = io.BytesIO()
    Image.fromarray(arr).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(blob: bytes, as_mask: bool = False) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as img:
        if as_mask:
            return np.asarray(img.convert("L")) > 127
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def montage(images: Sequence[np.ndarray], columns: int = 4, gap: int = 2) -> np.ndarray:
    """Contact sheet of equally sized RGB images."""

    if not images:
        raise ValueError("montage needs at least one image")
    h, w = images[0].shape[:2]
    rows = (len(images) + columns - 1) // columns
    cols = min(columns, len(images))
    sheet = Image.new("RGB", (cols * w + (cols - 1) * gap, rows * h + (rows - 1) * gap), (255, 255, 255))
    for i, image in enumerate(images):
        r, c = divmod(i, columns)
        sheet.paste(Image.fromarray(np.asarray(image, dtype=np.uint8)), (c * (w + gap), r * (h + gap)))
    return np.asarray(sheet)

