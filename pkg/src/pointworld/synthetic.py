"""Procedural ground-truth scenes and brute-force reference implementations.

Analytic ray casting against planes, boxes, and spheres produces exact
RGB-D frames for property tests and for the ground-truth denoiser. The
geometry here is implemented independently of the production modules
(homogeneous 4x4 transforms inverted with np.linalg.inv, per-point loops)
so it can serve as an oracle for them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, CameraIntrinsics, CameraPose, DepthMap, RgbdFrame
from .errors import EmptyInputError, InvariantError
from .splat import SplatConfig, Visibility

BRUTE_FORCE_LIMIT = 1_000_000


@dataclass(frozen=True)
class Albedo:
    """Solid color or a 3-d world-space checker pattern."""

    color: tuple = (0.7, 0.7, 0.7)
    checker_color: tuple | None = None
    checker_period: float = 1.0

    def sample(self, points: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), points.shape).copy()
        if self.checker_color is None:
            return base
        cells = np.floor(points / self.checker_period).sum(axis=-1)
        alt = np.asarray(self.checker_color, dtype=np.float64)
        base[cells % 2 == 1] = alt
        return base


@dataclass(frozen=True)
class Plane:
    """Finite rectangle (half sizes may be None for an infinite plane)."""

    origin: tuple
    u_axis: tuple
    v_axis: tuple
    u_half: float | None = None
    v_half: float | None = None
    albedo: Albedo = field(default_factory=Albedo)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        o = np.asarray(self.origin, dtype=np.float64)
        u = np.asarray(self.u_axis, dtype=np.float64)
        v = np.asarray(self.v_axis, dtype=np.float64)
        u = u / np.linalg.norm(u)
        v = v / np.linalg.norm(v)
        n = np.cross(u, v)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((o - origin) @ n) / denom
        t = np.where(np.abs(denom) > 1e-15, t, np.inf)
        hit = origin + t[..., None] * dirs
        rel = hit - o
        if self.u_half is not None:
            t = np.where(np.abs(rel @ u) <= self.u_half, t, np.inf)
        if self.v_half is not None:
            t = np.where(np.abs(rel @ v) <= self.v_half, t, np.inf)
        return np.where(t > 0, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: Albedo = field(default_factory=Albedo)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        oc = origin - c
        a = (dirs * dirs).sum(axis=-1)
        b = 2.0 * (dirs @ oc)
        c0 = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t1 > 0, t1, t2)
        return np.where((disc >= 0) & (t > 0), t, np.inf)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and half sizes."""

    center: tuple
    half_sizes: tuple
    albedo: Albedo = field(default_factory=Albedo)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_sizes, dtype=np.float64)
        lo, hi = c - h, c + h
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (lo - origin) / dirs
            t_hi = (hi - origin) / dirs
        near = np.minimum(t_lo, t_hi)
        far = np.maximum(t_lo, t_hi)
        # Rays parallel to a slab: inside forever, outside never.
        parallel = np.abs(dirs) < 1e-15
        inside = (origin >= lo) & (origin <= hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t_enter = near.max(axis=-1)
        t_exit = far.min(axis=-1)
        t = np.where(t_enter > 0, t_enter, t_exit)
        return np.where((t_enter <= t_exit) & (t > 0), t, np.inf)


@dataclass(frozen=True)
class SceneSpec:
    """A list of analytic primitives; everything else is invalid depth."""

    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))


@dataclass(frozen=True)
class TrajectorySpec:
    """Camera path: orbit, dolly, or piecewise-linear look-at waypoints."""

    kind: str
    frames: int
    intrinsics: CameraIntrinsics
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    degrees: float = 360.0
    height: float = 0.0
    look_outward: bool = False
    look_ahead_degrees: float = 0.0
    look_at: tuple | None = None
    axis: tuple = (0.0, 0.0, 1.0)
    distance: float = 1.0
    start: tuple = (0.0, 0.0, 0.0)
    waypoints: tuple = ()
    up: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.frames < 1:
            raise InvariantError("trajectory needs at least one frame")
        if self.kind not in ("orbit", "dolly", "lookat_path"):
            raise InvariantError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "orbit" and self.radius <= 0:
            raise InvariantError("orbit radius must be > 0")
        if self.kind == "lookat_path" and len(self.waypoints) < 1:
            raise InvariantError("lookat_path needs waypoints")


def look_at_pose(eye, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """World-to-camera pose for a camera at `eye` looking toward `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise InvariantError("look-at target coincides with the eye")
    z = fwd / norm
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([0.0, 0.0, 1.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -(R @ eye))


def trajectory_cameras(traj: TrajectorySpec) -> list[Camera]:
    """Expand a trajectory spec into per-frame cameras."""
    eyes = []
    targets = []
    if traj.kind == "orbit":
        center = np.asarray(traj.center, dtype=np.float64)
        for i in range(traj.frames):
            # End-exclusive step so a 360-degree orbit never repeats a frame.
            ang = np.deg2rad(traj.degrees * i / traj.frames)
            eye = center + np.array(
                [traj.radius * np.cos(ang), traj.height, traj.radius * np.sin(ang)]
            )
            if traj.look_at is not None:
                target = np.asarray(traj.look_at, dtype=np.float64)
            elif traj.look_ahead_degrees:
                ahead = ang + np.deg2rad(traj.look_ahead_degrees)
                target = center + np.array(
                    [traj.radius * np.cos(ahead), traj.height, traj.radius * np.sin(ahead)]
                )
            elif traj.look_outward:
                target = eye + (eye - center) * np.array([1.0, 0.0, 1.0])
            else:
                target = center + np.array([0.0, traj.height, 0.0])
            eyes.append(eye)
            targets.append(target)
    elif traj.kind == "dolly":
        start = np.asarray(traj.start, dtype=np.float64)
        axis = np.asarray(traj.axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        for i in range(traj.frames):
            step = traj.distance * (i / max(traj.frames - 1, 1))
            eye = start + axis * step
            target = (
                np.asarray(traj.look_at, dtype=np.float64)
                if traj.look_at is not None
                else eye + axis
            )
            eyes.append(eye)
            targets.append(target)
    else:
        pts = [
            (np.asarray(w["eye"], dtype=np.float64), np.asarray(w["target"], dtype=np.float64))
            for w in traj.waypoints
        ]
        if len(pts) == 1:
            eyes = [pts[0][0]] * traj.frames
            targets = [pts[0][1]] * traj.frames
        else:
            for i in range(traj.frames):
                s = (i / max(traj.frames - 1, 1)) * (len(pts) - 1)
                j = min(int(s), len(pts) - 2)
                f = s - j
                eyes.append(pts[j][0] * (1 - f) + pts[j + 1][0] * f)
                targets.append(pts[j][1] * (1 - f) + pts[j + 1][1] * f)
    return [
        Camera(traj.intrinsics, look_at_pose(e, t, traj.up)) for e, t in zip(eyes, targets)
    ]


def _camera_matrix(pose: CameraPose) -> np.ndarray:
    E = np.eye(4)
    E[:3, :3] = pose.R
    E[:3, 3] = pose.T
    return E


def _pixel_rays(intr: CameraIntrinsics, pose: CameraPose):
    """World-space ray origin and per-pixel directions with dir_cam.z == 1.

    With unnormalized directions whose camera z component is one, the ray
    parameter t at a hit equals the camera-space z-depth directly.
    """
    inv = np.linalg.inv(_camera_matrix(pose))
    origin = (inv @ np.array([0.0, 0.0, 0.0, 1.0]))[:3]
    us, vs = np.meshgrid(
        np.arange(intr.width, dtype=np.float64),
        np.arange(intr.height, dtype=np.float64),
    )
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1
    )
    dirs_world = dirs_cam @ inv[:3, :3].T
    return origin, dirs_world


def render_scene_view(scene: SceneSpec, camera: Camera) -> RgbdFrame:
    """Exact analytic RGB-D render of the scene into one camera."""
    intr = camera.intrinsics
    origin, dirs = _pixel_rays(intr, camera.pose)
    best_t = np.full((intr.height, intr.width), np.inf)
    best_prim = np.full((intr.height, intr.width), -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = prim.intersect(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_prim = np.where(closer, i, best_prim)

    valid = np.isfinite(best_t)
    depth = DepthMap(np.where(valid, best_t, 0.0), valid)
    rgb = np.zeros((intr.height, intr.width, 3))
    hits = origin + np.where(valid, best_t, 0.0)[..., None] * dirs
    for i, prim in enumerate(scene.primitives):
        sel = valid & (best_prim == i)
        if sel.any():
            rgb[sel] = prim.albedo.sample(hits[sel])
    return RgbdFrame(np.clip(rgb, 0.0, 1.0), depth)


def render_ground_truth(scene: SceneSpec, traj: TrajectorySpec):
    """Render the whole trajectory; returns (frames, cameras)."""
    cameras = trajectory_cameras(traj)
    frames = [render_scene_view(scene, cam) for cam in cameras]
    return frames, cameras


# ---------------------------------------------------------------------------
# Brute-force reference implementations (test oracles)


def oracle_unproject(depth: DepthMap, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Independent unprojection of valid pixels, row-major order."""
    inv = np.linalg.inv(_camera_matrix(pose))
    vs, us = np.nonzero(depth.valid)
    d = depth.values[vs, us]
    cam = np.stack([(us - intr.cx) * d / intr.fx, (vs - intr.cy) * d / intr.fy, d], axis=-1)
    homo = np.concatenate([cam, np.ones((cam.shape[0], 1))], axis=1)
    return (homo @ inv.T)[:, :3]


def _oracle_project_one(point: np.ndarray, intr: CameraIntrinsics, E: np.ndarray):
    cam = E @ np.array([point[0], point[1], point[2], 1.0])
    z = cam[2]
    if z <= 0:
        return None, None, z
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy
    return u, v, z


def brute_force_visibility(
    candidates: np.ndarray,
    cached_points: np.ndarray,
    camera: Camera,
    cfg: SplatConfig = SplatConfig(),
) -> np.ndarray:
    """Per-candidate occlusion classification via an explicit z-grid.

    Loops over every cached point, splatting its footprint into a minimum
    depth grid, then classifies each candidate with the same tolerance
    rules as visibility_against_cache. Small instances only.
    """
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    cached_points = np.asarray(cached_points, dtype=np.float64).reshape(-1, 3)
    if candidates.shape[0] * max(cached_points.shape[0], 1) > BRUTE_FORCE_LIMIT**2:
        raise InvariantError("brute-force oracle limit exceeded")
    intr = camera.intrinsics
    E = _camera_matrix(camera.pose)
    h, w, r = intr.height, intr.width, cfg.splat_radius

    zgrid = np.full((h, w), np.inf)
    for p in cached_points:
        u, v, z = _oracle_project_one(p, intr, E)
        if u is None or z <= cfg.near_plane:
            continue
        pu = int(np.floor(u + 0.5))
        pv = int(np.floor(v + 0.5))
        if not (0 <= pu < w and 0 <= pv < h):
            continue
        r0, r1 = max(pv - r, 0), min(pv + r + 1, h)
        c0, c1 = max(pu - r, 0), min(pu + r + 1, w)
        region = zgrid[r0:r1, c0:c1]
        np.minimum(region, z, out=region)

    out = np.full(candidates.shape[0], int(Visibility.IN_HOLE), dtype=np.int8)
    for i, p in enumerate(candidates):
        u, v, z = _oracle_project_one(p, intr, E)
        if u is None or z <= cfg.near_plane:
            continue
        pu = int(np.floor(u + 0.5))
        pv = int(np.floor(v + 0.5))
        if not (0 <= pu < w and 0 <= pv < h):
            continue
        zb = zgrid[pv, pu]
        if not np.isfinite(zb):
            continue
        tol = cfg.depth_test_epsilon * max(1.0, z)
        if abs(z - zb) <= tol:
            out[i] = int(Visibility.VISIBLE_MATCH)
        elif z > zb + tol:
            out[i] = int(Visibility.OCCLUDED)
    return out


def brute_force_cache(frames, cameras):
    """Store-everything baseline: unproject every valid pixel of every frame.

    Returns (points, colors, candidate_count).
    """
    pts = []
    cols = []
    total = 0
    for frame, cam in zip(frames, cameras):
        total += frame.depth.valid_count
        if total > BRUTE_FORCE_LIMIT:
            raise InvariantError("brute-force oracle limit exceeded")
        pts.append(oracle_unproject(frame.depth, cam.intrinsics, cam.pose))
        vs, us = np.nonzero(frame.depth.valid)
        cols.append(frame.rgb[vs, us])
    if not pts:
        raise EmptyInputError("no frames supplied")
    return np.concatenate(pts), np.concatenate(cols), total


def brute_force_quantile(values, p: float) -> float:
    """Sorted-order quantile with linear interpolation between neighbors."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise EmptyInputError("quantile of empty vector")
    if not 0.0 <= p <= 1.0:
        raise InvariantError("quantile probability must be in [0, 1]")
    if v.size == 1:
        return float(v[0])
    pos = p * (v.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    return float(v[lo] * (1.0 - frac) + v[hi] * frac)


def point_coverage(query: np.ndarray, reference: np.ndarray, tol: float) -> float:
    """Fraction of query points within `tol` of some reference point.

    Voxel-hash nearest-neighbor test, used to compare caches without any
    spatial index in the production code.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if query.shape[0] == 0:
        return 1.0
    if reference.shape[0] == 0:
        return 0.0
    cells = np.floor(reference / tol).astype(np.int64)
    occupied = set(map(tuple, cells))
    qcells = np.floor(query / tol).astype(np.int64)
    hit = 0
    neighborhood = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    for cell in map(tuple, qcells):
        for off in neighborhood:
            if (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]) in occupied:
                hit += 1
                break
    return hit / query.shape[0]


# ---------------------------------------------------------------------------
# JSON (de)serialization for scene and trajectory specs


def _albedo_to_dict(a: Albedo) -> dict:
    d = {"color": list(a.color)}
    if a.checker_color is not None:
        d["checker_color"] = list(a.checker_color)
        d["checker_period"] = a.checker_period
    return d


def _albedo_from_dict(d: dict) -> Albedo:
    return Albedo(
        color=tuple(d.get("color", (0.7, 0.7, 0.7))),
        checker_color=tuple(d["checker_color"]) if "checker_color" in d else None,
        checker_period=float(d.get("checker_period", 1.0)),
    )


def scene_to_dict(scene: SceneSpec) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, Plane):
            prims.append(
                {
                    "type": "plane",
                    "origin": list(p.origin),
                    "u_axis": list(p.u_axis),
                    "v_axis": list(p.v_axis),
                    "u_half": p.u_half,
                    "v_half": p.v_half,
                    "albedo": _albedo_to_dict(p.albedo),
                }
            )
        elif isinstance(p, Sphere):
            prims.append(
                {
                    "type": "sphere",
                    "center": list(p.center),
                    "radius": p.radius,
                    "albedo": _albedo_to_dict(p.albedo),
                }
            )
        elif isinstance(p, Box):
            prims.append(
                {
                    "type": "box",
                    "center": list(p.center),
                    "half_sizes": list(p.half_sizes),
                    "albedo": _albedo_to_dict(p.albedo),
                }
            )
        else:
            raise InvariantError(f"unknown primitive {type(p).__name__}")
    return {"primitives": prims}


def scene_from_dict(d: dict) -> SceneSpec:
    prims = []
    for pd in d.get("primitives", []):
        albedo = _albedo_from_dict(pd.get("albedo", {}))
        kind = pd.get("type")
        if kind == "plane":
            prims.append(
                Plane(
                    origin=tuple(pd["origin"]),
                    u_axis=tuple(pd["u_axis"]),
                    v_axis=tuple(pd["v_axis"]),
                    u_half=pd.get("u_half"),
                    v_half=pd.get("v_half"),
                    albedo=albedo,
                )
            )
        elif kind == "sphere":
            prims.append(Sphere(center=tuple(pd["center"]), radius=float(pd["radius"]), albedo=albedo))
        elif kind == "box":
            prims.append(
                Box(center=tuple(pd["center"]), half_sizes=tuple(pd["half_sizes"]), albedo=albedo)
            )
        else:
            raise InvariantError(f"unknown primitive type {kind!r}")
    return SceneSpec(tuple(prims))


def trajectory_to_dict(traj: TrajectorySpec) -> dict:
    intr = traj.intrinsics
    return {
        "kind": traj.kind,
        "frames": traj.frames,
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "center": list(traj.center),
        "radius": traj.radius,
        "degrees": traj.degrees,
        "height": traj.height,
        "look_outward": traj.look_outward,
        "look_ahead_degrees": traj.look_ahead_degrees,
        "look_at": list(traj.look_at) if traj.look_at is not None else None,
        "axis": list(traj.axis),
        "distance": traj.distance,
        "start": list(traj.start),
        "waypoints": [dict(w) for w in traj.waypoints],
        "up": list(traj.up),
    }


def trajectory_from_dict(d: dict) -> TrajectorySpec:
    i = d["intrinsics"]
    intr = CameraIntrinsics(
        fx=float(i["fx"]),
        fy=float(i["fy"]),
        cx=float(i["cx"]),
        cy=float(i["cy"]),
        width=int(i["width"]),
        height=int(i["height"]),
    )
    return TrajectorySpec(
        kind=d["kind"],
        frames=int(d["frames"]),
        intrinsics=intr,
        center=tuple(d.get("center", (0.0, 0.0, 0.0))),
        radius=float(d.get("radius", 1.0)),
        degrees=float(d.get("degrees", 360.0)),
        height=float(d.get("height", 0.0)),
        look_outward=bool(d.get("look_outward", False)),
        look_ahead_degrees=float(d.get("look_ahead_degrees", 0.0)),
        look_at=tuple(d["look_at"]) if d.get("look_at") is not None else None,
        axis=tuple(d.get("axis", (0.0, 0.0, 1.0))),
        distance=float(d.get("distance", 1.0)),
        start=tuple(d.get("start", (0.0, 0.0, 0.0))),
        waypoints=tuple(d.get("waypoints", ())),
        up=tuple(d.get("up", (0.0, 1.0, 0.0))),
    )


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f))


def load_trajectory_spec(path) -> TrajectorySpec:
    with open(path, "r", encoding="utf-8") as f:
        return trajectory_from_dict(json.load(f))
