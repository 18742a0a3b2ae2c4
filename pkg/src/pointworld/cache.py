"""Accumulated point-cloud world cache with per-frame point culling.

The cache grows append-only. Each update renders the existing points into
the incoming frame's view, then admits new points only where the render
left holes, or where the existing surface is back-facing with respect to
the current view direction. Everything else already explains the frame and
is rejected, which bounds memory as the trajectory revisits content.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    RgbdFrame,
    estimate_normals,
    pixel_of,
    project,
    unproject,
)
from .errors import EmptyInputError, InvariantError
from .splat import RenderOutput, SplatConfig, Visibility, render_points, visibility_against_cache


@dataclass(frozen=True)
class CullingConfig:
    """Culling thresholds.

    A visible candidate is admitted when the cached winner's normal dotted
    with the current view direction exceeds normal_dot_threshold. Normals
    are created camera-facing (dot < 0 at creation), so the default 0.0
    admits exactly the points whose cached surface is turned more than 90
    degrees away from the current viewing ray.
    """

    normal_dot_threshold: float = 0.0
    splat: SplatConfig = field(default_factory=SplatConfig)

    def __post_init__(self):
        if not -1.0 <= self.normal_dot_threshold <= 1.0:
            raise InvariantError("normal_dot_threshold must be in [-1, 1]")


@dataclass(frozen=True)
class CachedPoint:
    """Single cached point view (storage itself is column arrays)."""

    position: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    source_frame: int


@dataclass(eq=False)
class UpdateStats:
    candidates: int
    added_hole: int
    added_normal: int
    rejected: int

    def as_dict(self) -> dict:
        return {
            "candidates": self.candidates,
            "added_hole": self.added_hole,
            "added_normal": self.added_normal,
            "rejected": self.rejected,
        }


class WorldCache:
    """Append-only colored, normal-carrying point set with update stats."""

    def __init__(self):
        self._positions = np.empty((0, 3))
        self._colors = np.empty((0, 3))
        self._normals = np.empty((0, 3))
        self._source_frames = np.empty(0, dtype=np.int64)
        self.updates: list[UpdateStats] = []

    def __len__(self) -> int:
        return self._positions.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def colors(self) -> np.ndarray:
        return self._colors

    @property
    def normals(self) -> np.ndarray:
        return self._normals

    @property
    def source_frames(self) -> np.ndarray:
        return self._source_frames

    def point(self, i: int) -> CachedPoint:
        return CachedPoint(
            position=self._positions[i].copy(),
            color=self._colors[i].copy(),
            normal=self._normals[i].copy(),
            source_frame=int(self._source_frames[i]),
        )

    def _append(self, positions, colors, normals, frame_index: int):
        n = positions.shape[0]
        if n == 0:
            return
        norms = np.sqrt((normals * normals).sum(axis=1))
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise InvariantError("cached normals must be unit length within 1e-6")
        if not np.isfinite(positions).all():
            raise InvariantError("cached positions must be finite")
        self._positions = np.concatenate([self._positions, positions])
        self._colors = np.concatenate([self._colors, colors])
        self._normals = np.concatenate([self._normals, normals])
        self._source_frames = np.concatenate(
            [self._source_frames, np.full(n, frame_index, dtype=np.int64)]
        )

    def render(
        self, intr: CameraIntrinsics, pose: CameraPose, cfg: SplatConfig = SplatConfig()
    ) -> RenderOutput:
        return render_points(self._positions, self._colors, intr, pose, cfg)


def init_cache(
    frame: RgbdFrame,
    intr: CameraIntrinsics,
    pose: CameraPose,
    frame_index: int = 0,
) -> WorldCache:
    """Seed a cache with one point per valid pixel of the first frame."""
    if frame.depth.valid_count == 0:
        raise EmptyInputError("cannot initialize cache from a frame with no valid depth")
    points, colors = unproject(frame.depth, intr, pose, rgb=frame.rgb)
    normals = estimate_normals(frame.depth, intr, pose)
    vs, us = np.nonzero(frame.depth.valid)
    cache = WorldCache()
    cache._append(points, colors, normals[vs, us], frame_index)
    n = points.shape[0]
    cache.updates.append(UpdateStats(candidates=n, added_hole=n, added_normal=0, rejected=0))
    return cache


def update_cache(
    cache: WorldCache,
    frame: RgbdFrame,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: CullingConfig = CullingConfig(),
    frame_index: int | None = None,
) -> WorldCache:
    """Admit the frame's new content into the cache (in place).

    Pipeline: render the cache into the frame's view, unproject the frame's
    valid pixels as candidates, then
      - hole candidates are always added,
      - visible matches are added only when the cached winner's normal makes
        dot(normal, view_direction) > normal_dot_threshold (back-facing
        surface that cannot be seen from this viewpoint),
      - occluded candidates are rejected.
    """
    if frame_index is None:
        frame_index = len(cache.updates)
    rendered = cache.render(intr, pose, cfg.splat)
    points, colors = unproject(frame.depth, intr, pose, rgb=frame.rgb)
    n = points.shape[0]
    if n == 0:
        cache.updates.append(UpdateStats(0, 0, 0, 0))
        return cache
    normal_grid = estimate_normals(frame.depth, intr, pose)
    vs, us = np.nonzero(frame.depth.valid)
    cand_normals = normal_grid[vs, us]

    cls = visibility_against_cache(points, rendered, intr, pose, cfg.splat)
    hole = cls == int(Visibility.IN_HOLE)
    visible = cls == int(Visibility.VISIBLE_MATCH)

    back_facing = np.zeros(n, dtype=bool)
    if visible.any():
        uv, _, _ = project(points[visible], intr, pose, near=cfg.splat.near_plane)
        px = pixel_of(uv)
        winners = rendered.hit_index[px[:, 1], px[:, 0]]
        winner_normals = cache.normals[winners]
        center = pose.center
        delta = points[visible] - center
        dist = np.sqrt((delta * delta).sum(axis=1))
        view_dirs = delta / dist[:, None]
        back_facing[visible] = (winner_normals * view_dirs).sum(axis=1) > cfg.normal_dot_threshold

    admit = hole | back_facing
    cache._append(points[admit], colors[admit], cand_normals[admit], frame_index)
    added_hole = int(hole.sum())
    added_normal = int(back_facing.sum())
    cache.updates.append(
        UpdateStats(
            candidates=n,
            added_hole=added_hole,
            added_normal=added_normal,
            rejected=n - added_hole - added_normal,
        )
    )
    return cache


def cache_stats(cache: WorldCache) -> dict:
    """Totals, per-update breakdown, and reduction vs store-everything."""
    total_candidates = sum(u.candidates for u in cache.updates)
    reduction = 1.0 - len(cache) / total_candidates if total_candidates else 0.0
    return {
        "total_points": len(cache),
        "total_candidates": total_candidates,
        "reduction_ratio": reduction,
        "updates": [u.as_dict() for u in cache.updates],
    }


def build_cache(frames, cameras, cfg: CullingConfig = CullingConfig()) -> WorldCache:
    """Initialize from the first frame and fold in the rest."""
    if not frames:
        raise EmptyInputError("no frames supplied")
    if len(frames) != len(cameras):
        raise InvariantError("frames and cameras must pair up")
    cache = init_cache(frames[0], cameras[0].intrinsics, cameras[0].pose, frame_index=0)
    for k in range(1, len(frames)):
        update_cache(
            cache, frames[k], cameras[k].intrinsics, cameras[k].pose, cfg, frame_index=k
        )
    return cache


def store_everything_cache(frames, cameras) -> WorldCache:
    """No-culling baseline: every valid pixel of every frame becomes a point."""
    if not frames:
        raise EmptyInputError("no frames supplied")
    if len(frames) != len(cameras):
        raise InvariantError("frames and cameras must pair up")
    cache = WorldCache()
    for k, (frame, cam) in enumerate(zip(frames, cameras)):
        points, colors = unproject(frame.depth, cam.intrinsics, cam.pose, rgb=frame.rgb)
        normal_grid = estimate_normals(frame.depth, cam.intrinsics, cam.pose)
        vs, us = np.nonzero(frame.depth.valid)
        cache._append(points, colors, normal_grid[vs, us], k)
        n = points.shape[0]
        cache.updates.append(UpdateStats(candidates=n, added_hole=n, added_normal=0, rejected=0))
    return cache
