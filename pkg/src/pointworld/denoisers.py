"""DenoiserPort implementations: test fixtures and the subprocess seam.

IdentityDenoiser and StochasticTestDenoiser exercise the sampler without
any model; GroundTruthDenoiser answers with exact scene renders and drives
the closed-loop reconstruction checks. ExternProcessDenoiser shells out to
a subprocess speaking length-prefixed PFM stacks on stdin/stdout, the seam
for plugging a real generator in later.
"""

from __future__ import annotations

import json
import struct
import subprocess

import numpy as np

from .condition import PackedCondition, invalid_depth_encoding, pack_rgbd
from .errors import DenoiserContractError
from .fileio import parse_pfm, pfm_bytes
from .sampler import DenoiserPort


class IdentityDenoiser(DenoiserPort):
    """Returns the condition content where the mask is set, zero elsewhere.

    A fixed point of the sampler on fully pre-cached scenes: the output
    frames are exactly the cache renders.
    """

    def denoise(self, noisy_clip, conditions, noise_level, seed):
        out = np.zeros_like(noisy_clip)
        for f, cond in enumerate(conditions):
            m = cond.mask[..., None]
            out[f] = np.where(m, cond.grid, 0.0)
        return out


class GroundTruthDenoiser(DenoiserPort):
    """Answers every request with the exact ground-truth RGB-D frames.

    `frame_provider` maps a view index to an RgbdFrame. Frames are packed
    with the incoming condition's normalization so new content outside the
    condition's depth range still round-trips exactly.
    """

    def __init__(self, frame_provider):
        if callable(frame_provider):
            self._provider = frame_provider
        else:
            frames = list(frame_provider)
            self._provider = lambda k: frames[k]

    def denoise(self, noisy_clip, conditions, noise_level, seed):
        out = np.empty_like(noisy_clip)
        for f, cond in enumerate(conditions):
            frame = self._provider(cond.view_index)
            out[f] = pack_rgbd(
                frame.rgb,
                frame.depth,
                cond.depth_min,
                cond.depth_max,
                cond.placeholder_height,
            )
        return out


class StochasticTestDenoiser(DenoiserPort):
    """Seeded pseudo-generator for seam and determinism tests.

    Keeps the condition content where visible and fills holes with a
    seed-derived palette color plus low-amplitude per-frame noise, so
    independently generated clips disagree in the holes unless the sampler
    smooths them.
    """

    def __init__(self, palette_amplitude: float = 0.2, noise_amplitude: float = 0.02):
        self.palette_amplitude = palette_amplitude
        self.noise_amplitude = noise_amplitude

    def denoise(self, noisy_clip, conditions, noise_level, seed):
        rng = np.random.default_rng(seed)
        palette = 0.5 + self.palette_amplitude * rng.uniform(-1.0, 1.0, size=3)
        out = np.empty_like(noisy_clip)
        for f, cond in enumerate(conditions):
            h = cond.content_height
            ph = cond.placeholder_height
            fill = np.empty_like(cond.grid)
            fill[:h] = palette + self.noise_amplitude * rng.standard_normal((h,) + fill.shape[1:])
            fill[h:h + ph] = 0.0
            # Holes get mid-range depth so decoded frames stay valid.
            fill[h + ph:] = 0.5 + self.noise_amplitude * rng.standard_normal(
                (fill.shape[0] - h - ph,) + fill.shape[1:]
            )
            m = cond.mask[..., None]
            out[f] = np.where(m, cond.grid, np.clip(fill, 0.0, 1.0))
        return out


def _write_frame(pipe, payload: bytes):
    pipe.write(struct.pack("<Q", len(payload)))
    pipe.write(payload)


def _read_frame(stream) -> bytes:
    head = stream.read(8)
    if len(head) != 8:
        raise DenoiserContractError("extern denoiser closed the stream mid-frame")
    (length,) = struct.unpack("<Q", head)
    payload = stream.read(length)
    if len(payload) != length:
        raise DenoiserContractError("extern denoiser sent a truncated frame")
    return payload


def _stack_to_pfm(stack: np.ndarray) -> bytes:
    return b"".join(pfm_bytes(frame) for frame in stack)


def _pfm_to_stack(buf: bytes, count: int) -> np.ndarray:
    frames = []
    offset = 0
    for _ in range(count):
        frame, offset = parse_pfm(buf, offset)
        frames.append(frame)
    return np.stack(frames)


class ExternProcessDenoiser(DenoiserPort):
    """Run an external command once per denoise call.

    Wire format, all frames length-prefixed with a little-endian u64 byte
    count: a JSON header, then three PFM stacks (noisy grids, condition
    grids, condition masks); the child answers with one PFM stack of
    generated grids. PFM payloads are float32, which bounds the precision
    of anything crossing this boundary.
    """

    def __init__(self, command: list[str]):
        self.command = list(command)

    def denoise(self, noisy_clip, conditions, noise_level, seed):
        header = json.dumps(
            {
                "frames": int(noisy_clip.shape[0]),
                "height": int(noisy_clip.shape[1]),
                "width": int(noisy_clip.shape[2]),
                "noise_level": float(noise_level),
                "seed": int(seed),
                "view_indices": [c.view_index for c in conditions],
                "placeholder_height": conditions[0].placeholder_height,
                "pool_factor": conditions[0].pool_factor,
                "depth_min": conditions[0].depth_min,
                "depth_max": conditions[0].depth_max,
            }
        ).encode()

        cond_grids = np.stack([c.grid for c in conditions])
        cond_masks = np.stack([c.mask.astype(np.float64) for c in conditions])

        proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        try:
            _write_frame(proc.stdin, header)
            _write_frame(proc.stdin, _stack_to_pfm(noisy_clip))
            _write_frame(proc.stdin, _stack_to_pfm(cond_grids))
            _write_frame(proc.stdin, _stack_to_pfm(cond_masks))
            proc.stdin.close()
            reply = _read_frame(proc.stdout)
        finally:
            proc.stdout.close()
            code = proc.wait()
        if code != 0:
            raise DenoiserContractError(f"extern denoiser exited with status {code}")
        out = _pfm_to_stack(reply, noisy_clip.shape[0])
        if out.shape != noisy_clip.shape:
            raise DenoiserContractError(
                f"extern denoiser returned shape {out.shape}, expected {noisy_clip.shape}"
            )
        return out


EXTERN_IDENTITY_SNIPPET = r"""
import json, struct, sys
import numpy as np


def read_frame(stream):
    head = stream.read(8)
    (length,) = struct.unpack("<Q", head)
    return stream.read(length)


def write_frame(stream, payload):
    stream.write(struct.pack("<Q", len(payload)))
    stream.write(payload)


def parse_pfms(buf, count):
    frames = []
    offset = 0
    for _ in range(count):
        tokens = []
        pos = offset
        while len(tokens) < 4:
            while buf[pos:pos + 1].isspace():
                pos += 1
            end = pos
            while not buf[end:end + 1].isspace():
                end += 1
            tokens.append(buf[pos:end])
            pos = end
        pos += 1
        tag, w, h = tokens[0], int(tokens[1]), int(tokens[2])
        ch = 3 if tag == b"PF" else 1
        n = w * h * ch * 4
        a = np.frombuffer(buf[pos:pos + n], dtype="<f4").reshape(h, w, ch)
        frames.append(np.flipud(a))
        offset = pos + n
    return frames


def pfm_bytes(a):
    h, w = a.shape[:2]
    head = b"PF\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return head + np.flipud(a.astype("<f4")).tobytes()


header = json.loads(read_frame(sys.stdin.buffer))
n = header["frames"]
read_frame(sys.stdin.buffer)  # noisy stack, unused by the identity child
grids = parse_pfms(read_frame(sys.stdin.buffer), n)
masks = parse_pfms(read_frame(sys.stdin.buffer), n)
out = b"".join(
    pfm_bytes(np.where(m > 0.5, g, 0.0)) for g, m in zip(grids, masks)
)
write_frame(sys.stdout.buffer, out)
sys.stdout.buffer.flush()
"""
"""Identity-denoiser child process used by tests and the CLI demo."""
