"""Stage adapters that delegate to an external executable over stdin/stdout.

Wire format, one message per request and per response::

    u32 (big-endian)  body length
    body:
      u32 (big-endian)  header length
      header            UTF-8 JSON: {"op": str, "metadata": {...},
                                     "attachments": [{"name": str, "size": int}, ...]}
      attachment bytes  concatenated in header order (PNG images, DPTH depth blobs)

Responses use the same framing; ``metadata.error`` set means the stage failed.
Ops: ``segment``, ``translate``, ``inpaint``, ``synthesize``.
"""

from __future__ import annotations

import json
import struct
import subprocess
import threading
from dataclasses import dataclass, field
from typing import IO, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.camera import Camera, CameraExtrinsics
from services.geometry import RigidTransform
from services.kinematics import JointConfig, KinematicChain
from services.raster import Frame, decode_depth, decode_png, encode_depth, encode_png
from services.roaug import RobotLayer
from utils.errors import AugmentError
from utils.logging import get_logger

logger = get_logger(__name__)

_U32 = struct.Struct(">I")
MAX_MESSAGE_BYTES = 1 << 30


class PluginProtocolError(AugmentError):
    """Raised on malformed plug-in traffic or a plug-in reported failure."""


@dataclass(slots=True)
class PluginMessage:
    op: str
    metadata: Dict[str, Any] = field(default_factory=dict)
    attachments: Dict[str, bytes] = field(default_factory=dict)


def encode_message(message: PluginMessage) -> bytes:
    header = json.dumps(
        {
            "op": message.op,
            "metadata": message.metadata,
            "attachments": [{"name": name, "size": len(data)} for name, data in message.attachments.items()],
        },
        sort_keys=True,
    ).encode("utf-8")
    body = _U32.pack(len(header)) + header + b"".join(message.attachments.values())
    return _U32.pack(len(body)) + body


def decode_body(body: bytes) -> PluginMessage:
    if len(body) < _U32.size:
        raise PluginProtocolError("message body shorter than its header length field")
    (header_len,) = _U32.unpack_from(body)
    end = _U32.size + header_len
    if end > len(body):
        raise PluginProtocolError("header length runs past the message body")
    try:
        header = json.loads(body[_U32.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PluginProtocolError(f"plug-in header is not valid JSON: {exc}") from exc

    attachments: Dict[str, bytes] = {}
    offset = end
    for item in header.get("attachments", []):
        size = int(item["size"])
        if offset + size > len(body):
            raise PluginProtocolError(f"attachment {item['name']!r} runs past the message body")
        attachments[item["name"]] = body[offset:offset + size]
        offset += size
    if offset != len(body):
        raise PluginProtocolError("trailing bytes after the last attachment")
    return PluginMessage(header.get("op", ""), header.get("metadata", {}), attachments)


def _read_exact(stream: IO[bytes], size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise PluginProtocolError("plug-in closed its output mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: IO[bytes]) -> Optional[PluginMessage]:
    """Next message from ``stream``; None on a clean end of stream."""

    prefix = stream.read(_U32.size)
    if not prefix:
        return None
    if len(prefix) < _U32.size:
        prefix += _read_exact(stream, _U32.size - len(prefix))
    (length,) = _U32.unpack(prefix)
    if length > MAX_MESSAGE_BYTES:
        raise PluginProtocolError(f"message of {length} bytes exceeds the limit")
    return decode_body(_read_exact(stream, length))


def write_message(stream: IO[bytes], message: PluginMessage) -> None:
    stream.write(encode_message(message))
    stream.flush()


def frame_metadata(frame: Frame) -> Dict[str, Any]:
    return {
        "width": frame.shape[1],
        "height": frame.shape[0],
        "intrinsics": frame.camera.intrinsics.to_dict(),
        "extrinsics": frame.camera.extrinsics.pose.to_array7(),
        "gripper_pose": frame.gripper_pose.to_array7(),
    }


def frame_attachments(frame: Frame, prefix: str = "") -> Dict[str, bytes]:
    return {
        f"{prefix}rgb.png": encode_png(frame.rgb),
        f"{prefix}depth.dpth": encode_depth(frame.depth),
        f"{prefix}mask.png": encode_png(frame.mask),
    }


class PluginProcess:
    """A long-lived plug-in subprocess; calls are serialised."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._process: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    def _ensure_started(self) -> subprocess.Popen:
        if self._process is not None and self._process.poll() is not None:
            self._shutdown(self._process)
            self._process = None
        if self._process is None:
            logger.info("Starting plug-in", extra={"command": " ".join(self.command)})
            try:
                self._process = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            except OSError as exc:
                raise PluginProtocolError(f"cannot start plug-in {self.command!r}: {exc}") from exc
        return self._process

    def call(self, message: PluginMessage) -> PluginMessage:
        with self._lock:
            process = self._ensure_started()
            assert process.stdin is not None and process.stdout is not None
            try:
                write_message(process.stdin, message)
            except (BrokenPipeError, OSError) as exc:
                raise PluginProtocolError(f"plug-in {self.command[0]} stopped accepting input") from exc
            reply = read_message(process.stdout)
        if reply is None:
            raise PluginProtocolError(f"plug-in {self.command[0]} exited without replying")
        if reply.metadata.get("error"):
            raise PluginProtocolError(f"plug-in {message.op} failed: {reply.metadata['error']}")
        return reply

    def close(self) -> None:
        with self._lock:
            if self._process is not None:
                self._shutdown(self._process)
                self._process = None

    @staticmethod
    def _shutdown(process: subprocess.Popen) -> None:
        try:
            if process.stdin and not process.stdin.closed:
                try:
                    process.stdin.close()
                except OSError:
                    pass
            try:
                process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                process.kill()
                process.wait()
        finally:
            if process.stdout and not process.stdout.closed:
                process.stdout.close()

    def __enter__(self) -> "PluginProcess":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def _require(reply: PluginMessage, name: str) -> bytes:
    try:
        return reply.attachments[name]
    except KeyError:
        raise PluginProtocolError(f"plug-in reply to {reply.op!r} lacks attachment {name!r}") from None


def _check_shape(array: np.ndarray, shape: Tuple[int, int], what: str) -> np.ndarray:
    if array.shape[:2] != shape:
        raise PluginProtocolError(f"plug-in {what} is {array.shape[:2]}, expected {shape}")
    return array


class ExternalSegmenter:
    def __init__(self, process: PluginProcess):
        self.process = process

    def mask(self, frame: Frame) -> np.ndarray:
        reply = self.process.call(PluginMessage("segment", frame_metadata(frame), frame_attachments(frame)))
        return _check_shape(decode_png(_require(reply, "mask.png"), as_mask=True), frame.shape, "mask")


class ExternalTranslator:
    def __init__(self, process: PluginProcess):
        self.process = process

    def translate(
        self,
        frame: Frame,
        source_chain: KinematicChain,
        target_chain: KinematicChain,
        hole: Optional[np.ndarray] = None,
    ) -> RobotLayer:
        metadata = frame_metadata(frame) | {"source": source_chain.name, "target": target_chain.name}
        attachments = frame_attachments(frame)
        if hole is not None:
            attachments["hole.png"] = encode_png(np.asarray(hole, dtype=bool))
        reply = self.process.call(PluginMessage("translate", metadata, attachments))

        rgb = _check_shape(decode_png(_require(reply, "rgb.png")), frame.shape, "layer")
        mask = _check_shape(decode_png(_require(reply, "mask.png"), as_mask=True), frame.shape, "layer mask")
        depth = decode_depth(reply.attachments["depth.dpth"]) if "depth.dpth" in reply.attachments else np.zeros(frame.shape, np.float32)
        q = reply.metadata.get("joint_config")
        layer = frame.replace(rgb=rgb, mask=mask, depth=np.where(mask, depth, 0.0), joint_config=None)
        return RobotLayer(
            layer,
            JointConfig(q) if q is not None else None,
            float(reply.metadata.get("position_residual", 0.0)),
            float(reply.metadata.get("rotation_residual", 0.0)),
        )


class ExternalInpainter:
    def __init__(self, process: PluginProcess):
        self.process = process

    def inpaint(self, frames: Sequence[Frame], masks: Sequence[np.ndarray]) -> List[Frame]:
        attachments: Dict[str, bytes] = {}
        for j, (frame, hole) in enumerate(zip(frames, masks)):
            attachments[f"{j:05d}/rgb.png"] = encode_png(frame.rgb)
            attachments[f"{j:05d}/depth.dpth"] = encode_depth(frame.depth)
            attachments[f"{j:05d}/hole.png"] = encode_png(np.asarray(hole, dtype=bool))
        reply = self.process.call(PluginMessage("inpaint", {"frames": len(frames)}, attachments))

        filled = []
        for j, (frame, hole) in enumerate(zip(frames, masks)):
            hole = np.asarray(hole, dtype=bool)
            new_rgb = _check_shape(decode_png(_require(reply, f"{j:05d}/rgb.png")), frame.shape, "inpainted frame")
            rgb = frame.rgb.copy()
            rgb[hole] = new_rgb[hole]
            depth = frame.depth.copy()
            if f"{j:05d}/depth.dpth" in reply.attachments:
                depth[hole] = decode_depth(reply.attachments[f"{j:05d}/depth.dpth"])[hole]
            filled.append(frame.replace(rgb=rgb, depth=depth))
        return filled


class ExternalViewSynthesizer:
    def __init__(self, process: PluginProcess):
        self.process = process

    def synthesize(self, frame: Frame, perturbation: RigidTransform) -> Frame:
        metadata = frame_metadata(frame) | {"perturbation": perturbation.to_array7()}
        reply = self.process.call(PluginMessage("synthesize", metadata, frame_attachments(frame)))
        rgb = _check_shape(decode_png(_require(reply, "rgb.png")), frame.shape, "synthesized view")
        depth = decode_depth(reply.attachments["depth.dpth"]) if "depth.dpth" in reply.attachments else np.zeros(frame.shape, np.float32)
        mask = decode_png(reply.attachments["mask.png"], as_mask=True) if "mask.png" in reply.attachments else np.zeros(frame.shape, bool)
        camera = Camera(frame.camera.intrinsics, CameraExtrinsics(frame.camera.extrinsics.pose @ perturbation))
        return frame.replace(rgb=rgb, depth=depth, mask=mask, camera=camera)
