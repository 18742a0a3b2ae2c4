"""Z-buffer point splatting into a target view.

Points splat a square pixel footprint; the nearest point (smallest
camera-space z, ties broken by lowest point index) wins each pixel. The
scatter-min runs through exact float64 reductions, so the output is
bit-identical for any internal evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .camera import CameraIntrinsics, CameraPose, DepthMap, pixel_of, project
from .errors import InvariantError


@dataclass(frozen=True)
class SplatConfig:
    """Rasterization knobs.

    splat_radius is in pixels: radius 0 covers the containing pixel only,
    radius 1 adds the 8-neighborhood. depth_test_epsilon is the occlusion
    tie tolerance in meters, scaled by max(1, z) when comparing depths.
    """

    splat_radius: int = 1
    depth_test_epsilon: float = 1e-3
    near_plane: float = 1e-4

    def __post_init__(self):
        if self.splat_radius < 0:
            raise InvariantError("splat_radius must be >= 0")
        if self.depth_test_epsilon <= 0:
            raise InvariantError("depth_test_epsilon must be > 0")
        if self.near_plane <= 0:
            raise InvariantError("near_plane must be > 0")


@dataclass(eq=False)
class RenderOutput:
    """Result of splatting a point set into a view.

    mask(u, v) == True exactly where at least one point splatted;
    partial_rgb and partial_depth are defined only there. zbuffer holds the
    winning camera-space z (inf where empty) and hit_index the winning
    point's index (-1 where empty).
    """

    partial_rgb: np.ndarray
    partial_depth: DepthMap
    mask: np.ndarray
    zbuffer: np.ndarray
    hit_index: np.ndarray

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


class Visibility(IntEnum):
    """Classification of a candidate point against a rendered cache."""

    IN_HOLE = 0
    VISIBLE_MATCH = 1
    OCCLUDED = 2


def render_points(
    points: np.ndarray,
    colors: np.ndarray | None,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: SplatConfig = SplatConfig(),
) -> RenderOutput:
    """Splat world-space points into the view defined by (intr, pose).

    Each in-frustum point covers a (2r+1)^2 pixel footprint clipped to the
    image. Per pixel the smallest z wins; equal z falls to the lower point
    index. An empty input produces an all-zero mask.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if colors.shape[0] != n:
            raise InvariantError("colors must pair one-to-one with points")

    h, w = intr.height, intr.width
    zbuf = np.full(h * w, np.inf)
    hit = np.full(h * w, np.iinfo(np.int64).max)

    if n:
        uv, z, in_frustum = project(pts, intr, pose, near=cfg.near_plane)
        idx = np.nonzero(in_frustum)[0]
        if idx.size:
            px = pixel_of(uv[idx])
            z_in = z[idx]
            r = cfg.splat_radius
            span = np.arange(-r, r + 1, dtype=np.int64)
            # Footprint pixels: (P, k) for k = (2r+1)^2 offsets.
            fx = (px[:, 0:1] + span[None, :])[:, :, None]
            fy = (px[:, 1:2] + span[None, :])[:, None, :]
            cols = np.broadcast_to(fx, (idx.size, span.size, span.size)).reshape(-1)
            rows = np.broadcast_to(fy, (idx.size, span.size, span.size)).reshape(-1)
            k = span.size * span.size
            entry_z = np.repeat(z_in, k)
            entry_idx = np.repeat(idx, k)
            keep = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
            flat = rows[keep] * w + cols[keep]
            entry_z = entry_z[keep]
            entry_idx = entry_idx[keep]

            np.minimum.at(zbuf, flat, entry_z)
            winner = entry_z == zbuf[flat]
            np.minimum.at(hit, flat[winner], entry_idx[winner])

    mask = np.isfinite(zbuf)
    hit[~mask] = -1
    depth_vals = np.where(mask, zbuf, 0.0)
    rgb = np.zeros((h * w, 3))
    if colors is not None and mask.any():
        rgb[mask] = colors[hit[mask]]

    return RenderOutput(
        partial_rgb=rgb.reshape(h, w, 3),
        partial_depth=DepthMap(depth_vals.reshape(h, w), mask.reshape(h, w)),
        mask=mask.reshape(h, w),
        zbuffer=zbuf.reshape(h, w),
        hit_index=hit.reshape(h, w),
    )


def visibility_against_cache(
    points: np.ndarray,
    output: RenderOutput,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: SplatConfig = SplatConfig(),
) -> np.ndarray:
    """Classify candidate points against a rendered cache view.

    Returns an int array of Visibility values, one per candidate:

    - IN_HOLE: lands outside the frustum or on a mask=0 pixel, or sits in
      front of the cached surface by more than the tolerance (new content
      the cache cannot explain).
    - VISIBLE_MATCH: depth agrees with the z-buffer within
      depth_test_epsilon * max(1, z).
    - OCCLUDED: lies behind the cached surface by more than the tolerance.

    ``output`` must come from render_points with the same intr/pose/cfg.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    result = np.full(pts.shape[0], int(Visibility.IN_HOLE), dtype=np.int8)
    if pts.shape[0] == 0:
        return result

    uv, z, in_frustum = project(pts, intr, pose, near=cfg.near_plane)
    idx = np.nonzero(in_frustum)[0]
    if idx.size == 0:
        return result

    px = pixel_of(uv[idx])
    covered = output.mask[px[:, 1], px[:, 0]]
    zb = output.zbuffer[px[:, 1], px[:, 0]]
    z_in = z[idx]
    tol = cfg.depth_test_epsilon * np.maximum(1.0, z_in)

    matches = covered & (np.abs(z_in - zb) <= tol)
    behind = covered & (z_in > zb + tol)
    result[idx[matches]] = int(Visibility.VISIBLE_MATCH)
    result[idx[behind]] = int(Visibility.OCCLUDED)
    return result
