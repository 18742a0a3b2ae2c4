"""Depth-source alignment in disparity space and metric rescaling.

Aligning a relative depth map to a pose-consistent reference solves

    min over (scale, bias) of || M * (scale / d_src + bias - 1 / d_ref) ||^2

by the closed-form 2x2 normal equations; the sums are accumulated with
math.fsum so the result is exact to the last bit regardless of pixel
order. Metric rescaling maps relative depth into a metric range via the
ratio of inter-quantile ranges and scales camera translation to match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, DepthMap
from .errors import DegenerateInputError, DimensionMismatchError, EmptyInputError, InvariantError

DEFAULT_QUANTILE_LO = 0.2
DEFAULT_QUANTILE_HI = 0.8


@dataclass(frozen=True)
class AlignmentSolution:
    """Disparity-space scale/shift, RMS residual, and pixel count."""

    scale: float
    bias: float
    residual: float
    valid_count: int

    def __post_init__(self):
        if self.valid_count < 2:
            raise InvariantError("alignment needs at least 2 pixels")
        if not math.isfinite(self.scale):
            raise InvariantError("alignment scale must be finite")
        if self.residual < 0:
            raise InvariantError("residual must be >= 0")


@dataclass(frozen=True)
class MetricScale:
    """Inter-quantile-range ratio mapping relative depth to metric scale."""

    s_metric: float
    quantile_lo: float = DEFAULT_QUANTILE_LO
    quantile_hi: float = DEFAULT_QUANTILE_HI

    def __post_init__(self):
        if not self.s_metric > 0:
            raise InvariantError("s_metric must be > 0")
        if not 0.0 <= self.quantile_lo < self.quantile_hi <= 1.0:
            raise InvariantError("quantiles must satisfy 0 <= lo < hi <= 1")


def _joint_valid(d_src: DepthMap, d_ref: DepthMap, mask: np.ndarray | None) -> np.ndarray:
    if d_src.values.shape != d_ref.values.shape:
        raise DimensionMismatchError(
            f"depth shapes differ: {d_src.values.shape} vs {d_ref.values.shape}"
        )
    valid = d_src.valid & d_ref.valid
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d_src.values.shape:
            raise DimensionMismatchError("mask shape does not match depth maps")
        valid = valid & mask
    return valid


def align_disparity(
    d_src: DepthMap,
    d_ref: DepthMap,
    mask: np.ndarray | None = None,
) -> AlignmentSolution:
    """Least-squares disparity alignment of d_src onto d_ref.

    Solves the masked system with design matrix columns [1/d_src, 1] and
    target 1/d_ref via the 2x2 normal equations. Raises a degenerate-input
    error for fewer than 2 usable pixels or a rank-deficient system
    (constant source disparity).
    """
    valid = _joint_valid(d_src, d_ref, mask)
    n = int(valid.sum())
    if n < 2:
        raise DegenerateInputError(f"alignment needs >= 2 valid pixels, got {n}")

    x = 1.0 / d_src.values[valid]
    y = 1.0 / d_ref.values[valid]
    sxx = math.fsum(x * x)
    sx = math.fsum(x)
    sxy = math.fsum(x * y)
    sy = math.fsum(y)

    det = sxx * n - sx * sx
    if not det > 1e-12 * sxx * n:
        raise DegenerateInputError(
            "disparity system is rank deficient (source disparity is constant)"
        )
    scale = (n * sxy - sx * sy) / det
    bias = (sxx * sy - sx * sxy) / det
    residual = math.sqrt(math.fsum((scale * x + bias - y) ** 2) / n)
    return AlignmentSolution(scale=scale, bias=bias, residual=residual, valid_count=n)


def alignment_objective(
    d_src: DepthMap,
    d_ref: DepthMap,
    scale: float,
    bias: float,
    mask: np.ndarray | None = None,
) -> float:
    """Sum of squared masked disparity errors at (scale, bias)."""
    valid = _joint_valid(d_src, d_ref, mask)
    x = 1.0 / d_src.values[valid]
    y = 1.0 / d_ref.values[valid]
    return math.fsum((scale * x + bias - y) ** 2)


def apply_alignment(d_src: DepthMap, solution: AlignmentSolution) -> DepthMap:
    """Map source depth through the fitted disparity transform.

    d_aligned = 1 / (scale / d_src + bias); pixels whose transformed
    disparity is not strictly positive become invalid rather than clamped.
    """
    disparity = np.where(d_src.valid, solution.scale / np.where(d_src.valid, d_src.values, 1.0)
                         + solution.bias, 0.0)
    ok = d_src.valid & (disparity > 0)
    values = np.where(ok, 1.0 / np.where(disparity > 0, disparity, 1.0), 0.0)
    return DepthMap(values, ok)


def _gather_valid(maps) -> np.ndarray:
    if isinstance(maps, DepthMap):
        maps = [maps]
    chunks = [m.values[m.valid] for m in maps if m.valid_count]
    if not chunks:
        raise EmptyInputError("no valid depth pixels")
    return np.concatenate(chunks)


def metric_scale(
    d_source,
    d_metric,
    quantile_lo: float = DEFAULT_QUANTILE_LO,
    quantile_hi: float = DEFAULT_QUANTILE_HI,
) -> MetricScale:
    """Inter-quantile-range ratio of the metric reference over the source.

    Both arguments accept a DepthMap or a sequence of DepthMaps (the
    default is scene-wide pooling). Quantiles interpolate linearly between
    order statistics over valid pixels only.
    """
    src = _gather_valid(d_source)
    ref = _gather_valid(d_metric)
    src_iqr = float(np.quantile(src, quantile_hi) - np.quantile(src, quantile_lo))
    ref_iqr = float(np.quantile(ref, quantile_hi) - np.quantile(ref, quantile_lo))
    if src_iqr <= 0:
        raise DegenerateInputError("source inter-quantile range is zero")
    if ref_iqr <= 0:
        raise DegenerateInputError("metric inter-quantile range is zero")
    return MetricScale(s_metric=ref_iqr / src_iqr, quantile_lo=quantile_lo, quantile_hi=quantile_hi)


def apply_metric(d: DepthMap, pose: CameraPose, s: MetricScale):
    """Scale depth and camera translation by s_metric; rotation unchanged."""
    scaled = DepthMap(np.where(d.valid, d.values * s.s_metric, 0.0), d.valid.copy())
    return scaled, CameraPose(pose.R, pose.T * s.s_metric)
