"""Procedural tabletop scene rendered as a background plate with true depth."""

from __future__ import annotations

from typing import Optional

import numpy as np

from config import RenderConfig, SceneConfig
from services.camera import Camera, pixel_rays
from services.raster import BackgroundPlate


def _plane_hits(origin_coord: float, dir_coord: np.ndarray, plane: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane - origin_coord) / dir_coord
    return np.where(np.isfinite(t) & (t > 0), t, np.inf)


def render_plate(camera: Camera, cfg: Optional[SceneConfig] = None, render_cfg: Optional[RenderConfig] = None) -> BackgroundPlate:
    """Checkerboard table, back wall and a flat sky at the far plane.

    Depth is the camera-frame z of the nearest surface, the far plane where
    only sky is visible.
    """

    cfg = cfg or SceneConfig()
    render_cfg = render_cfg or RenderConfig()
    far = render_cfg.far_plane

    rays_world = pixel_rays(camera.intrinsics) @ camera.extrinsics.pose.rotation.matrix.T
    origin = camera.extrinsics.pose.translation

    t_table = _plane_hits(origin[2], rays_world[..., 2], cfg.table_height)
    table_pts = origin + np.where(np.isfinite(t_table), t_table, 0.0)[..., None] * rays_world
    on_table = (np.abs(table_pts[..., 0]) <= cfg.table_extent) & (np.abs(table_pts[..., 1]) <= cfg.table_extent)
    t_table = np.where(on_table, t_table, np.inf)

    t_wall = _plane_hits(origin[0], rays_world[..., 0], -cfg.wall_distance)
    wall_pts = origin + np.where(np.isfinite(t_wall), t_wall, 0.0)[..., None] * rays_world
    t_wall = np.where(wall_pts[..., 2] >= cfg.table_height, t_wall, np.inf)

    rgb = np.empty(camera.shape + (3,), dtype=np.uint8)
    rgb[...] = cfg.sky_color
    depth = np.full(camera.shape, far, dtype=np.float32)

    wall = (t_wall < far) & (t_wall <= t_table)
    rgb[wall] = cfg.wall_color
    depth[wall] = t_wall[wall]

    table = (t_table < far) & ~wall
    cells = np.floor(table_pts[..., 0] / cfg.checker_size) + np.floor(table_pts[..., 1] / cfg.checker_size)
    light = cfg.table_colors[0]
    dark = cfg.table_colors[1]
    parity = (cells.astype(np.int64) % 2) == 0
    rgb[table & parity] = light
    rgb[table & ~parity] = dark
    depth[table] = t_table[table]

    return BackgroundPlate(rgb, depth)
