"""Pinhole camera geometry: unprojection, projection, view rays, normals.

Conventions used throughout the package:

    x_cam = R @ x_world + T          (world -> camera rigid transform)
    u = fx * x_cam / z_cam + cx      (pixel column)
    v = fy * y_cam / z_cam + cy      (pixel row)

Depth is z-depth: the camera-space z coordinate, not the ray length.
Pixel (u, v) addresses the pixel center, so unprojecting pixel (u, v)
at depth d gives the camera-space point
((u - cx) * d / fx, (v - cy) * d / fy, d).

All rigid transforms are evaluated with elementwise arithmetic (no BLAS
matmul) so results are bit-identical regardless of the thread count of
the underlying math library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    InvariantError,
)

_POSE_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvariantError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )
        if self.width <= 0 or self.height <= 0:
            raise InvariantError("image dimensions must be positive")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform: x_cam = R @ x_world + T."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        if not (np.isfinite(R).all() and np.isfinite(T).all()):
            raise InvariantError("pose contains non-finite entries")
        if np.abs(R @ R.T - np.eye(3)).max() > _POSE_TOL:
            raise InvariantError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > _POSE_TOL:
            raise InvariantError("rotation determinant differs from +1 by more than 1e-9")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T @ T)."""
        return _rotate(-self.T, self.R.T)

    def inverse(self) -> "CameraPose":
        """Camera-to-world transform as a CameraPose."""
        return CameraPose(self.R.T, _rotate(-self.T, self.R.T))

    def compose(self, other: "CameraPose") -> "CameraPose":
        """self after other: (self.compose(other))(x) == self(other(x))."""
        return CameraPose(self.R @ other.R, _rotate(other.T, self.R) + self.T)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (..., 3) into camera coordinates."""
        return _rotate(points, self.R) + self.T

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Transform camera points (..., 3) back to world coordinates."""
        return _rotate(np.asarray(points, dtype=np.float64) - self.T, self.R.T)


def _rotate(points: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Apply a 3x3 matrix to (..., 3) points with elementwise arithmetic."""
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack(
        [
            R[0, 0] * x + R[0, 1] * y + R[0, 2] * z,
            R[1, 0] * x + R[1, 1] * y + R[1, 2] * z,
            R[2, 0] * x + R[2, 1] * y + R[2, 2] * z,
        ],
        axis=-1,
    )


@dataclass(eq=False)
class DepthMap:
    """Metric z-depth grid with a per-pixel validity mask.

    Valid pixels hold finite, strictly positive depth in meters; invalid
    pixels (sky, holes) carry an arbitrary value and valid=False.
    """

    values: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvariantError(f"depth values must be 2-d, got shape {values.shape}")
        if self.valid is None:
            valid = np.isfinite(values) & (values > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise DimensionMismatchError(
                    f"validity mask shape {valid.shape} != depth shape {values.shape}"
                )
            checked = values[valid]
            if checked.size and not (np.isfinite(checked).all() and (checked > 0).all()):
                raise InvariantError("valid depth pixels must be finite and > 0")
        self.values = values
        self.valid = valid

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(eq=False)
class RgbdFrame:
    """Color image in [0, 1] paired with a same-size depth map."""

    rgb: np.ndarray
    depth: DepthMap

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise InvariantError(f"rgb must be (H, W, 3), got {rgb.shape}")
        if rgb.shape[:2] != self.depth.values.shape:
            raise DimensionMismatchError(
                f"rgb {rgb.shape[:2]} and depth {self.depth.values.shape} sizes differ"
            )
        if rgb.size and (rgb.min() < 0.0 or rgb.max() > 1.0):
            raise InvariantError("rgb channels must lie in [0, 1]")
        self.rgb = rgb

    @property
    def height(self) -> int:
        return self.depth.height

    @property
    def width(self) -> int:
        return self.depth.width


@dataclass(frozen=True)
class Camera:
    """A view: intrinsics plus world-to-camera pose."""

    intrinsics: CameraIntrinsics
    pose: CameraPose


def unproject(
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    rgb: np.ndarray | None = None,
):
    """Lift every valid depth pixel to a world-space point.

    Returns (points, colors): points is (N, 3) in row-major pixel order over
    the valid pixels; colors is (N, 3) when an rgb grid is supplied, else
    None. No valid pixels yields empty arrays, not an error.
    """
    if (depth.height, depth.width) != (intr.height, intr.width):
        raise DimensionMismatchError(
            f"depth {depth.width}x{depth.height} does not match "
            f"intrinsics {intr.width}x{intr.height}"
        )
    if rgb is not None:
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.shape[:2] != depth.values.shape:
            raise DimensionMismatchError("rgb grid does not match depth dimensions")

    vs, us = np.nonzero(depth.valid)  # row-major order
    d = depth.values[vs, us]
    x = (us - intr.cx) * d / intr.fx
    y = (vs - intr.cy) * d / intr.fy
    cam_points = np.stack([x, y, d], axis=-1)
    points = pose.to_world(cam_points)
    colors = rgb[vs, us] if rgb is not None else None
    return points, colors


def unproject_grid(depth: DepthMap, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Unproject the full grid to an (H, W, 3) world-point array, NaN where invalid."""
    if (depth.height, depth.width) != (intr.height, intr.width):
        raise DimensionMismatchError("depth dimensions do not match intrinsics")
    us = np.arange(intr.width, dtype=np.float64)[None, :]
    vs = np.arange(intr.height, dtype=np.float64)[:, None]
    d = np.where(depth.valid, depth.values, np.nan)
    x = (us - intr.cx) * d / intr.fx
    y = (vs - intr.cy) * d / intr.fy
    return pose.to_world(np.stack([x, y, d], axis=-1))


def project(
    points: np.ndarray,
    intr: CameraIntrinsics,
    pose: CameraPose,
    near: float = 1e-4,
):
    """Project world points into a view.

    Returns (uv, z_cam, in_frustum) where uv is (N, 2) continuous pixel
    coordinates, z_cam the camera-space depth, and in_frustum is True iff
    z_cam > near and the point rounds to a pixel inside the image. Points
    behind the camera are flagged, never dropped.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pose.to_camera(pts)
    z = cam[:, 2]
    safe_z = np.where(z > near, z, 1.0)
    u = intr.fx * cam[:, 0] / safe_z + intr.cx
    v = intr.fy * cam[:, 1] / safe_z + intr.cy
    px = np.floor(u + 0.5)
    py = np.floor(v + 0.5)
    in_frustum = (
        (z > near)
        & (px >= 0)
        & (px <= intr.width - 1)
        & (py >= 0)
        & (py <= intr.height - 1)
    )
    return np.stack([u, v], axis=-1), z, in_frustum


def pixel_of(uv: np.ndarray) -> np.ndarray:
    """Round continuous pixel coordinates to integer pixel indices.

    floor(x + 0.5) everywhere, the single rounding rule shared by the
    projector and the splatter.
    """
    return np.floor(np.asarray(uv, dtype=np.float64) + 0.5).astype(np.int64)


def view_direction(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Unit vector(s) from the camera center toward world point(s).

    Accepts (3,) or (N, 3); raises for points within 1e-12 m of the center.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    delta = pts - pose.center
    norms = np.sqrt((delta * delta).sum(axis=1))
    if (norms <= 1e-12).any():
        raise DegenerateInputError("point coincides with the camera center")
    out = delta / norms[:, None]
    return out[0] if single else out


def estimate_normals(depth: DepthMap, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Per-pixel world-space unit normals, oriented toward the capturing camera.

    The normal is the normalized cross product of central-difference
    tangents on the unprojected grid. At borders or next to invalid pixels
    the differences fall back to one-sided; pixels with no usable neighbor
    pair (or a degenerate cross product) fall back to the inverse view
    direction. Invalid pixels get a zero vector.
    """
    pts = unproject_grid(depth, intr, pose)
    valid = depth.valid

    tan_u, ok_u = _grid_tangent(pts, valid, axis=1)
    tan_v, ok_v = _grid_tangent(pts, valid, axis=0)

    n = np.cross(tan_u, tan_v)
    norms = np.sqrt((n * n).sum(axis=-1))
    ok = ok_u & ok_v & (norms > 0) & valid

    center = pose.center
    to_point = pts - center
    dist = np.sqrt((to_point * to_point).sum(axis=-1))
    # Valid depth implies dist > 0 (z-depth > 0).
    inverse_view = -to_point / np.where(dist > 0, dist, 1.0)[..., None]

    normals = np.where(ok[..., None], n / np.where(ok, norms, 1.0)[..., None], inverse_view)
    # Orient toward the camera: dot(normal, view direction) < 0.
    flip = (normals * to_point).sum(axis=-1) > 0
    normals = np.where(flip[..., None], -normals, normals)
    normals[~valid] = 0.0
    return normals


def _grid_tangent(pts: np.ndarray, valid: np.ndarray, axis: int):
    """Central-difference tangent along one grid axis with one-sided fallback."""
    nxt = np.roll(pts, -1, axis=axis)
    prv = np.roll(pts, 1, axis=axis)
    has_nxt = np.roll(valid, -1, axis=axis).copy()
    has_prv = np.roll(valid, 1, axis=axis).copy()
    # Rolled wrap-around rows/columns are not real neighbors.
    if axis == 0:
        has_nxt[-1, :] = False
        has_prv[0, :] = False
    else:
        has_nxt[:, -1] = False
        has_prv[:, 0] = False

    central = nxt - prv
    forward = nxt - pts
    backward = pts - prv
    both = has_nxt & has_prv
    tangent = np.where(
        both[..., None],
        central,
        np.where(has_nxt[..., None], forward, backward),
    )
    ok = has_nxt | has_prv
    return np.where(ok[..., None], tangent, 0.0), ok
