"""Model-facing conditioning: partial RGB-D views and the packed layout.

A condition frame is the cache rendered into a target view: partial RGB,
partial depth, and the visibility mask. Packing concatenates the RGB and
depth images along the height axis with a constant placeholder band
between them, duplicates the mask into both regions, and max-pools the
packed mask. Depth travels normalized to [0, 1] by a sequence-wide affine
map whose parameters ride along for exact inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import WorldCache
from .camera import CameraIntrinsics, CameraPose, DepthMap, RgbdFrame
from .errors import DimensionMismatchError, EmptyInputError, FormatError, InvariantError
from .splat import SplatConfig

PLACEHOLDER_VALUE = 0.0
DEFAULT_PLACEHOLDER_HEIGHT = 8
DEFAULT_POOL_FACTOR = 8


@dataclass(eq=False)
class ConditionFrame:
    """Partial RGB-D observation of the cache from one target view."""

    partial_rgb: np.ndarray
    partial_depth: DepthMap
    mask: np.ndarray
    view_index: int

    def __post_init__(self):
        if self.partial_rgb.shape[:2] != self.mask.shape or self.mask.shape != (
            self.partial_depth.height,
            self.partial_depth.width,
        ):
            raise DimensionMismatchError("condition grids must share dimensions")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass(eq=False)
class PackedCondition:
    """Height-concatenated [rgb, placeholder, depth] grid plus masks.

    grid rows [0, H) hold RGB, rows [H, H+ph) the constant placeholder,
    rows [H+ph, 2H+ph) the normalized depth replicated across channels.
    mask mirrors that layout with the visibility mask in both content
    regions and zeros in the placeholder. pooled_mask max-pools mask by
    pool_factor.
    """

    grid: np.ndarray
    mask: np.ndarray
    pooled_mask: np.ndarray
    placeholder_height: int
    pool_factor: int
    depth_min: float
    depth_max: float
    view_index: int

    @property
    def content_height(self) -> int:
        return (self.grid.shape[0] - self.placeholder_height) // 2

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def depth_span(self) -> float:
        span = self.depth_max - self.depth_min
        return span if span > 0 else 1.0


def make_condition(
    cache: WorldCache,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: SplatConfig = SplatConfig(),
    view_index: int = 0,
) -> ConditionFrame:
    """Render the cache into a target view as a conditioning frame.

    Invisible pixels carry the sentinel (rgb 0, invalid depth, mask 0).
    """
    if len(cache) == 0:
        raise EmptyInputError("cannot render a condition from an empty cache")
    rendered = cache.render(intr, pose, cfg)
    return ConditionFrame(
        partial_rgb=rendered.partial_rgb,
        partial_depth=rendered.partial_depth,
        mask=rendered.mask,
        view_index=view_index,
    )


def _check_pool(packed_height: int, width: int, pool_factor: int):
    if pool_factor < 1:
        raise InvariantError("pool_factor must be >= 1")
    if packed_height % pool_factor or width % pool_factor:
        raise DimensionMismatchError(
            f"pool_factor {pool_factor} does not divide packed grid {packed_height}x{width}"
        )


def max_pool(mask: np.ndarray, factor: int) -> np.ndarray:
    """Max-pool a boolean grid by an integer factor that divides its shape."""
    h, w = mask.shape
    _check_pool(h, w, factor)
    return mask.reshape(h // factor, factor, w // factor, factor).max(axis=(1, 3))


def invalid_depth_encoding(depth_min: float, depth_span: float) -> float:
    """Encoded value that decodes strictly below zero (marks invalid depth)."""
    return -(depth_min / depth_span + 1.0)


def pack_rgbd(
    rgb: np.ndarray,
    depth: DepthMap,
    depth_min: float,
    depth_max: float,
    placeholder_height: int = DEFAULT_PLACEHOLDER_HEIGHT,
) -> np.ndarray:
    """Pack one RGB-D pair into the height-concatenated grid.

    Valid depth maps through (d - depth_min) / span; invalid pixels take an
    encoding that decodes to a negative depth. Values are not clamped, so
    depths outside [depth_min, depth_max] survive a round trip.
    """
    h, w = depth.values.shape
    span = depth_max - depth_min
    span = span if span > 0 else 1.0
    norm = np.where(depth.valid, (depth.values - depth_min) / span,
                    invalid_depth_encoding(depth_min, span))
    grid = np.full((2 * h + placeholder_height, w, 3), PLACEHOLDER_VALUE)
    grid[:h] = rgb
    grid[h + placeholder_height:] = norm[..., None]
    return grid


def pack_condition(
    frames,
    placeholder_height: int = DEFAULT_PLACEHOLDER_HEIGHT,
    pool_factor: int = DEFAULT_POOL_FACTOR,
) -> list[PackedCondition]:
    """Pack a sequence of condition frames with shared depth normalization.

    The affine depth map uses the min/max of valid depths across the whole
    sequence; normalized values are clamped to [0, 1] (holes are masked, so
    clamping only guards float rounding at the extremes).
    """
    frames = list(frames)
    if not frames:
        raise EmptyInputError("no condition frames to pack")
    h, w = frames[0].height, frames[0].width
    for f in frames:
        if (f.height, f.width) != (h, w):
            raise DimensionMismatchError("condition frames must share dimensions")
    packed_height = 2 * h + placeholder_height
    _check_pool(packed_height, w, pool_factor)

    valid_depths = [f.partial_depth.values[f.mask] for f in frames if f.mask.any()]
    if valid_depths:
        allv = np.concatenate(valid_depths)
        depth_min, depth_max = float(allv.min()), float(allv.max())
    else:
        depth_min, depth_max = 0.0, 1.0
    span = depth_max - depth_min
    span = span if span > 0 else 1.0

    out = []
    for f in frames:
        norm = np.where(f.mask, np.clip((f.partial_depth.values - depth_min) / span, 0.0, 1.0), 0.0)
        grid = np.full((packed_height, w, 3), PLACEHOLDER_VALUE)
        grid[:h] = f.partial_rgb
        grid[h + placeholder_height:] = norm[..., None]
        mask = np.zeros((packed_height, w), dtype=bool)
        mask[:h] = f.mask
        mask[h + placeholder_height:] = f.mask
        out.append(
            PackedCondition(
                grid=grid,
                mask=mask,
                pooled_mask=max_pool(mask, pool_factor),
                placeholder_height=placeholder_height,
                pool_factor=pool_factor,
                depth_min=depth_min,
                depth_max=depth_max,
                view_index=f.view_index,
            )
        )
    return out


def unpack_condition(packed: PackedCondition) -> ConditionFrame:
    """Exact inverse of pack_condition on its image."""
    hp, w = packed.grid.shape[:2]
    ph = packed.placeholder_height
    if (hp - ph) % 2 or hp <= ph:
        raise FormatError(f"packed height {hp} incompatible with placeholder {ph}")
    h = (hp - ph) // 2
    rgb_mask = packed.mask[:h]
    depth_mask = packed.mask[h + ph:]
    if not np.array_equal(rgb_mask, depth_mask):
        raise FormatError("rgb-region and depth-region masks differ")
    if packed.mask[h:h + ph].any():
        raise FormatError("placeholder rows of the mask must be zero")
    if not np.all(packed.grid[h:h + ph] == PLACEHOLDER_VALUE):
        raise FormatError("placeholder rows of the grid must be constant")

    rgb = packed.grid[:h].copy()
    norm = packed.grid[h + ph:, :, 0]
    depth = np.where(rgb_mask, norm * packed.depth_span + packed.depth_min, 0.0)
    return ConditionFrame(
        partial_rgb=rgb,
        partial_depth=DepthMap(depth, rgb_mask.copy()),
        mask=rgb_mask.copy(),
        view_index=packed.view_index,
    )


def unpack_generated(grid: np.ndarray, template: PackedCondition) -> RgbdFrame:
    """Decode a generated packed grid (denoiser output) into an RGB-D frame.

    Every pixel is generated content: validity comes from the decoded depth
    (positive and finite), not from the condition mask. RGB is clipped to
    [0, 1] since generators may overshoot slightly.
    """
    hp, w = template.grid.shape[:2]
    if grid.shape != (hp, w, 3):
        raise DimensionMismatchError(
            f"generated grid shape {grid.shape} != packed layout {(hp, w, 3)}"
        )
    h = template.content_height
    ph = template.placeholder_height
    rgb = np.clip(grid[:h], 0.0, 1.0)
    depth = grid[h + ph:, :, 0] * template.depth_span + template.depth_min
    valid = np.isfinite(depth) & (depth > 0)
    return RgbdFrame(rgb, DepthMap(np.where(valid, depth, 0.0), valid))
