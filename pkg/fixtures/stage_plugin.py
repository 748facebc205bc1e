"""Minimal stage plug-in used by the test-suite.

segment     -> mask of pixels with valid depth
translate   -> echoes the frame as the robot layer, mask = hole (or input mask)
inpaint     -> paints every hole pixel mid-grey
synthesize  -> echoes the input view
Any other op gets an error reply.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import numpy as np  # noqa: E402

from services.plugin_client import PluginMessage, read_message, write_message  # noqa: E402
from services.raster import decode_depth, decode_png, encode_png  # noqa: E402


def handle(message: PluginMessage) -> PluginMessage:
    files = message.attachments
    if message.op == "segment":
        depth = decode_depth(files["depth.dpth"])
        return PluginMessage("segment", {}, {"mask.png": encode_png(depth > 0)})
    if message.op == "translate":
        mask_blob = files.get("hole.png", files["mask.png"])
        return PluginMessage(
            "translate",
            {"position_residual": 0.0, "rotation_residual": 0.0},
            {"rgb.png": files["rgb.png"], "mask.png": mask_blob, "depth.dpth": files["depth.dpth"]},
        )
    if message.op == "inpaint":
        out = {}
        for j in range(int(message.metadata["frames"])):
            rgb = decode_png(files[f"{j:05d}/rgb.png"]).copy()
            hole = decode_png(files[f"{j:05d}/hole.png"], as_mask=True)
            rgb[hole] = 128
            out[f"{j:05d}/rgb.png"] = encode_png(rgb)
        return PluginMessage("inpaint", {}, out)
    if message.op == "synthesize":
        return PluginMessage("synthesize", {}, dict(files))
    return PluginMessage(message.op, {"error": f"unsupported op {message.op!r}"})


def main() -> None:
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
    while True:
        message = read_message(stdin)
        if message is None:
            return
        write_message(stdout, handle(message))


if __name__ == "__main__":
    main()
