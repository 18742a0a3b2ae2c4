"""Auto-regressive long-video scheduling with overlapping clips.

A trajectory is split into half-overlapping clips. Each clip is denoised
conditioned on renders of the current world cache; the overlap with the
previous clip starts from the previous result under light noise instead of
pure noise. Consecutive clips are then averaged over the overlap,
re-noised lightly, and refined with one more denoiser call. Every
generated frame feeds back into the cache so later clips see all earlier
content.

The noise model at this boundary is level-mixing: an input at noise level
s is (1 - s) * signal + s * eta with eta standard normal. Level 1.0 is
pure noise, 0.0 is clean; the real diffusion schedule lives behind the
DenoiserPort.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .cache import CullingConfig, WorldCache, init_cache, update_cache
from .camera import Camera, RgbdFrame
from .condition import (
    DEFAULT_PLACEHOLDER_HEIGHT,
    DEFAULT_POOL_FACTOR,
    PackedCondition,
    make_condition,
    pack_condition,
    unpack_generated,
)
from .errors import DenoiserContractError, EmptyInputError, InvariantError

DEFAULT_CLIP_LENGTH = 49


@dataclass(frozen=True)
class ClipSchedule:
    """Half-open [start, end) frame ranges covering a trajectory."""

    clip_length: int
    overlap: int
    clips: tuple

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(tuple(c) for c in self.clips))


class DenoiserPort(abc.ABC):
    """Abstract generator boundary standing in for the diffusion model.

    Implementations must be deterministic given (inputs, seed) and return
    a stack with the same shape as noisy_clip.
    """

    @abc.abstractmethod
    def denoise(
        self,
        noisy_clip: np.ndarray,
        conditions: list[PackedCondition],
        noise_level: float,
        seed: int,
    ) -> np.ndarray:
        """Turn a noisy packed frame stack into generated packed frames."""


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for the overlapping-clip sampler."""

    clip_length: int = DEFAULT_CLIP_LENGTH
    overlap: int | None = None  # None -> floor(clip_length / 2)
    refine_noise_level: float = 0.2
    seed: int = 0
    blend: str = "uniform"  # or "linear-ramp"
    refine_whole_segment: bool = False
    placeholder_height: int = DEFAULT_PLACEHOLDER_HEIGHT
    pool_factor: int = DEFAULT_POOL_FACTOR

    def __post_init__(self):
        if not 0.0 < self.refine_noise_level < 1.0:
            raise InvariantError("refine_noise_level must be in (0, 1)")
        if self.blend not in ("uniform", "linear-ramp"):
            raise InvariantError(f"unknown blend weighting {self.blend!r}")

    @property
    def effective_overlap(self) -> int:
        return self.clip_length // 2 if self.overlap is None else self.overlap


@dataclass(eq=False)
class SampleResult:
    frames: list[RgbdFrame]
    cache: WorldCache
    schedule: ClipSchedule


def plan_clips(total_frames: int, clip_length: int = DEFAULT_CLIP_LENGTH,
               overlap: int | None = None) -> ClipSchedule:
    """Cover [0, total_frames) with clips overlapping by exactly `overlap`.

    Clip i starts at i * (clip_length - overlap); the final clip is clipped
    to the trajectory end and may be shorter.
    """
    if total_frames < 1:
        raise EmptyInputError("total_frames must be >= 1")
    if overlap is None:
        overlap = clip_length // 2
    if clip_length < 1:
        raise InvariantError("clip_length must be >= 1")
    if not 0 <= overlap < clip_length:
        raise InvariantError(f"overlap {overlap} must satisfy 0 <= overlap < clip_length {clip_length}")
    stride = clip_length - overlap
    clips = []
    start = 0
    while True:
        end = min(start + clip_length, total_frames)
        clips.append((start, end))
        if end >= total_frames:
            break
        start += stride
    return ClipSchedule(clip_length=clip_length, overlap=overlap, clips=tuple(clips))


def mix_noise(content: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """(1 - level) * content + level * standard normal noise."""
    return (1.0 - level) * content + level * rng.standard_normal(content.shape)


def merge_overlap(clip_a: np.ndarray, clip_b: np.ndarray, overlap: int,
                  cfg: SamplerConfig = SamplerConfig()):
    """Average the trailing frames of clip_a with the leading frames of clip_b.

    Returns (merged, refine_noise_level): the blended overlap stack plus the
    noise level the caller should use for the refinement denoise. Uniform
    weighting is the plain mean; linear-ramp interpolates so each end of the
    overlap equals the adjacent clip's value exactly.
    """
    if overlap < 1 or overlap > clip_a.shape[0] or overlap > clip_b.shape[0]:
        raise InvariantError(f"overlap {overlap} exceeds clip lengths")
    a = clip_a[-overlap:]
    b = clip_b[:overlap]
    if a.shape != b.shape:
        raise InvariantError("overlapping regions are misaligned")
    if cfg.blend == "uniform":
        merged = 0.5 * (a + b)
    else:
        if overlap == 1:
            w = np.array([0.5])
        else:
            w = np.arange(overlap, dtype=np.float64) / (overlap - 1)
        w = w.reshape((overlap,) + (1,) * (a.ndim - 1))
        merged = (1.0 - w) * a + w * b
    return merged, cfg.refine_noise_level


def _check_output(out: np.ndarray, expected_shape) -> np.ndarray:
    out = np.asarray(out, dtype=np.float64)
    if out.shape != tuple(expected_shape):
        raise DenoiserContractError(
            f"denoiser returned shape {out.shape}, expected {tuple(expected_shape)}"
        )
    return out


def run_autoregressive(
    init_frame: RgbdFrame,
    trajectory: list[Camera],
    denoiser: DenoiserPort,
    cull_cfg: CullingConfig = CullingConfig(),
    sampler_cfg: SamplerConfig = SamplerConfig(),
    initial_cache: WorldCache | None = None,
) -> SampleResult:
    """Generate RGB-D frames along the trajectory, clip by clip.

    The cache starts from init_frame (or a supplied pre-built cache) and is
    updated with every generated frame after each clip, so each clip's
    conditions reflect all previously generated content. Returned frames
    cover the whole trajectory, with merged-and-refined values in overlap
    regions.
    """
    if not trajectory:
        raise EmptyInputError("trajectory must contain at least one camera")
    total = len(trajectory)
    schedule = plan_clips(total, sampler_cfg.clip_length, sampler_cfg.overlap)

    cache = initial_cache
    if cache is None:
        cache = init_cache(init_frame, trajectory[0].intrinsics, trajectory[0].pose, 0)

    root = np.random.SeedSequence(sampler_cfg.seed)
    clip_seeds = root.spawn(len(schedule.clips))

    frames_out: list[RgbdFrame | None] = [None] * total
    prev_output: np.ndarray | None = None
    prev_end = 0

    for ci, (start, end) in enumerate(schedule.clips):
        noise_ss, refine_ss, denoise_ss, refine_denoise_ss = clip_seeds[ci].spawn(4)
        rng = np.random.default_rng(noise_ss)

        conditions = [
            make_condition(cache, trajectory[k].intrinsics, trajectory[k].pose,
                           cull_cfg.splat, view_index=k)
            for k in range(start, end)
        ]
        packed = pack_condition(conditions, sampler_cfg.placeholder_height,
                                sampler_cfg.pool_factor)
        shape = (end - start,) + packed[0].grid.shape

        noisy = rng.standard_normal(shape)
        carry = prev_end - start if ci > 0 else 0
        if carry > 0:
            noisy[:carry] = mix_noise(
                prev_output[-carry:], sampler_cfg.refine_noise_level, rng
            )

        clip_out = _check_output(
            denoiser.denoise(noisy, packed, 1.0, _seed_int(denoise_ss)), shape
        )

        if carry > 0:
            merged, refine_level = merge_overlap(prev_output, clip_out, carry, sampler_cfg)
            refine_rng = np.random.default_rng(refine_ss)
            if sampler_cfg.refine_whole_segment:
                region = clip_out.copy()
                region[:carry] = merged
                renoised = mix_noise(region, refine_level, refine_rng)
                refined = _check_output(
                    denoiser.denoise(renoised, packed, refine_level,
                                     _seed_int(refine_denoise_ss)),
                    region.shape,
                )
                clip_out = refined
            else:
                renoised = mix_noise(merged, refine_level, refine_rng)
                refined = _check_output(
                    denoiser.denoise(renoised, packed[:carry], refine_level,
                                     _seed_int(refine_denoise_ss)),
                    merged.shape,
                )
                clip_out = clip_out.copy()
                clip_out[:carry] = refined

        for f, k in enumerate(range(start, end)):
            frames_out[k] = unpack_generated(clip_out[f], packed[f])

        for k in range(start, end):
            update_cache(cache, frames_out[k], trajectory[k].intrinsics,
                         trajectory[k].pose, cull_cfg, frame_index=k)

        prev_output = clip_out
        prev_end = end

    return SampleResult(frames=frames_out, cache=cache, schedule=schedule)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def seam_metrics(frames: list[RgbdFrame], schedule: ClipSchedule) -> dict:
    """Frame-to-frame color deltas with clip-boundary transitions singled out.

    The seam discontinuity at a clip boundary is the mean absolute RGB
    change across the transitions entering and leaving the merged overlap
    region; the baseline is the mean delta over all other transitions.
    """
    deltas = [
        float(np.abs(frames[t + 1].rgb - frames[t].rgb).mean())
        for t in range(len(frames) - 1)
    ]
    boundary = set()
    for ci in range(1, len(schedule.clips)):
        start = schedule.clips[ci][0]
        prev_end = schedule.clips[ci - 1][1]
        if start - 1 >= 0:
            boundary.add(start - 1)  # into the merged region
        if prev_end - 1 < len(deltas):
            boundary.add(prev_end - 1)  # out of the merged region
    within = [d for t, d in enumerate(deltas) if t not in boundary]
    at_boundary = [d for t, d in enumerate(deltas) if t in boundary]
    mean_within = float(np.mean(within)) if within else 0.0
    max_boundary = float(np.max(at_boundary)) if at_boundary else 0.0
    return {
        "per_transition": deltas,
        "boundary_transitions": sorted(boundary),
        "mean_within": mean_within,
        "max_boundary": max_boundary,
        "ratio": max_boundary / mean_within if mean_within > 0 else 0.0,
    }
