"""On-disk formats: PFM depth/color maps, binary PLY point clouds,
camera-trajectory JSON, 8-bit PNGs, and atomic output helpers.

PFM files are little-endian (scale -1.0) with rows stored bottom-to-top.
Depth validity is encoded in-band: non-positive or non-finite values read
back as invalid pixels. PLY files are binary little-endian with properties
x,y,z (float32), red,green,blue (uint8), nx,ny,nz (float32); cache update
stats ride along in a header comment.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np
from PIL import Image

from .cache import UpdateStats, WorldCache
from .camera import Camera, CameraIntrinsics, CameraPose, DepthMap, RgbdFrame
from .errors import FormatError

_STATS_COMMENT = "pointworld_stats"


# ---------------------------------------------------------------------------
# PFM


def pfm_bytes(array: np.ndarray) -> bytes:
    """Encode a (H, W) or (H, W, 3) float array as little-endian PFM bytes."""
    a = np.asarray(array, dtype=np.float32)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"PFM supports (H, W) or (H, W, 3) arrays, got {a.shape}")
    h, w = a.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.flipud(a).astype("<f4").tobytes()


def parse_pfm(buf: bytes, offset: int = 0):
    """Decode one PFM image from a byte buffer; returns (array, next_offset)."""

    def read_token(pos):
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(buf) and not buf[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError("truncated PFM header")
        return buf[pos:end], end

    tag, offset = read_token(offset)
    if tag not in (b"PF", b"Pf"):
        raise FormatError(f"not a PFM image (tag {tag!r})")
    wtok, offset = read_token(offset)
    htok, offset = read_token(offset)
    stok, offset = read_token(offset)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as e:
        raise FormatError(f"bad PFM header: {e}") from None
    offset += 1  # single whitespace after the scale line
    channels = 3 if tag == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    end = offset + count * 4
    if end > len(buf):
        raise FormatError("PFM payload shorter than header promises")
    data = np.frombuffer(buf[offset:end], dtype=dtype).reshape(h, w, channels)
    data = np.flipud(data).astype(np.float64)
    return (data[..., 0] if channels == 1 else data), end


def write_pfm(path, array: np.ndarray):
    Path(path).write_bytes(pfm_bytes(array))


def read_pfm(path) -> np.ndarray:
    data, _ = parse_pfm(Path(path).read_bytes())
    return data


def write_depth_pfm(path, depth: DepthMap):
    """Invalid pixels are stored as 0.0 (reads back as invalid)."""
    write_pfm(path, np.where(depth.valid, depth.values, 0.0))


def read_depth_pfm(path) -> DepthMap:
    values = read_pfm(path)
    if values.ndim != 2:
        raise FormatError(f"{path}: expected single-channel PFM for depth")
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(np.where(valid, values, 0.0), valid)


# ---------------------------------------------------------------------------
# PNG (8-bit, via Pillow)


def write_png_rgb(path, rgb: np.ndarray):
    a = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(a, mode="RGB").save(path)


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_png_mask(path, mask: np.ndarray):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def save_rgbd(prefix, frame: RgbdFrame):
    """Write <prefix>.pfm (depth) and <prefix>.png (color)."""
    prefix = Path(prefix)
    write_depth_pfm(prefix.with_suffix(".pfm"), frame.depth)
    write_png_rgb(prefix.with_suffix(".png"), frame.rgb)


def load_rgbd(prefix) -> RgbdFrame:
    prefix = Path(prefix)
    depth = read_depth_pfm(prefix.with_suffix(".pfm"))
    rgb = read_png_rgb(prefix.with_suffix(".png"))
    return RgbdFrame(rgb, depth)


# ---------------------------------------------------------------------------
# Camera trajectory JSON


def camera_to_dict(cam: Camera) -> dict:
    i = cam.intrinsics
    return {
        "fx": i.fx,
        "fy": i.fy,
        "cx": i.cx,
        "cy": i.cy,
        "width": i.width,
        "height": i.height,
        "R": [float(x) for x in cam.pose.R.reshape(-1)],
        "T": [float(x) for x in cam.pose.T],
    }


def camera_from_dict(d: dict) -> Camera:
    try:
        intr = CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )
        pose = CameraPose(np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
                          np.asarray(d["T"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad camera entry: {e}") from None
    return Camera(intr, pose)


def save_cameras(path, cameras: list[Camera]):
    with open(path, "w", encoding="utf-8") as f:
        json.dump([camera_to_dict(c) for c in cameras], f, indent=2)
        f.write("\n")


def load_cameras(path) -> list[Camera]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, list):
        raise FormatError(f"{path}: camera trajectory must be a JSON array")
    return [camera_from_dict(d) for d in data]


# ---------------------------------------------------------------------------
# PLY

_PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
        ("nx", "<f4"),
        ("ny", "<f4"),
        ("nz", "<f4"),
    ]
)

_PLY_PROPERTIES = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
    "property float nx",
    "property float ny",
    "property float nz",
]


def export_ply(path, cache: WorldCache):
    """Binary little-endian PLY with cache stats in a header comment."""
    n = len(cache)
    rec = np.empty(n, dtype=_PLY_DTYPE)
    pos = cache.positions.astype("<f4")
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    col = np.floor(np.clip(cache.colors, 0.0, 1.0) * 255.0 + 0.5).astype("u1")
    rec["red"], rec["green"], rec["blue"] = col[:, 0], col[:, 1], col[:, 2]
    nrm = cache.normals.astype("<f4")
    rec["nx"], rec["ny"], rec["nz"] = nrm[:, 0], nrm[:, 1], nrm[:, 2]

    stats_json = json.dumps([u.as_dict() for u in cache.updates], separators=(",", ":"))
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"comment {_STATS_COMMENT} {stats_json}",
            f"element vertex {n}",
            *_PLY_PROPERTIES,
            "end_header",
        ]
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(rec.tobytes())


def import_ply(path) -> WorldCache:
    """Read a PLY written by export_ply (or any file with the same layout).

    Normals are renormalized after float32 quantization; source_frame
    indices are not stored in the format and come back as zero.
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    n = None
    stats = None
    props = []
    fmt_ok = False
    for line in header[1:]:
        if line.startswith("format "):
            fmt_ok = line.strip() == "format binary_little_endian 1.0"
        elif line.startswith(f"comment {_STATS_COMMENT} "):
            try:
                stats = json.loads(line[len(f"comment {_STATS_COMMENT} "):])
            except json.JSONDecodeError:
                stats = None
        elif line.startswith("element vertex "):
            n = int(line.split()[-1])
        elif line.startswith("element "):
            raise FormatError(f"{path}: unsupported PLY element {line.split()[1]!r}")
        elif line.startswith("property "):
            props.append(line.strip())
    if not fmt_ok:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    if n is None or props != _PLY_PROPERTIES:
        raise FormatError(f"{path}: PLY layout does not match x,y,z,rgb,nx,ny,nz")
    if len(body) < n * _PLY_DTYPE.itemsize:
        raise FormatError(f"{path}: PLY body shorter than {n} vertices")

    rec = np.frombuffer(body[: n * _PLY_DTYPE.itemsize], dtype=_PLY_DTYPE)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    normals = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    norms = np.sqrt((normals * normals).sum(axis=1))
    normals = normals / np.where(norms > 0, norms, 1.0)[:, None]

    cache = WorldCache()
    cache._append(positions, colors, normals, 0)
    if stats is not None:
        cache.updates = [
            UpdateStats(
                candidates=int(u["candidates"]),
                added_hole=int(u["added_hole"]),
                added_normal=int(u["added_normal"]),
                rejected=int(u["rejected"]),
            )
            for u in stats
        ]
    return cache


# ---------------------------------------------------------------------------
# Atomic outputs, hashing, manifests


@contextlib.contextmanager
def atomic_file(path):
    """Write to a temp file, rename over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp-{os.getpid()}"
    try:
        yield tmp
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, path)


@contextlib.contextmanager
def atomic_dir(path):
    """Populate a temp directory, swap it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if path.exists():
        shutil.rmtree(path)
    os.rename(tmp, path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def build_manifest(config: dict, inputs, timings: dict, outputs=None) -> dict:
    """Run manifest: config hash, input hashes, per-stage timings."""
    input_hashes = {}
    for p in inputs:
        p = Path(p)
        if p.is_file():
            input_hashes[str(p)] = sha256_file(p)
    return {
        "config": config,
        "config_hash": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "inputs": input_hashes,
        "outputs": sorted(str(o) for o in (outputs or [])),
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
