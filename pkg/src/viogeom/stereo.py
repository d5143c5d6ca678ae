"""Disparity -> depth -> point-cloud pipeline for a rectified stereo rig.

Pixel coordinates are 0-based with the pixel-center convention: integer
coordinate (x, y) is the center of column x, row y. All per-pixel outputs
are ordered by row-major pixel index, so results are deterministic
regardless of how callers parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.errors import GeometryError
from viogeom.se3 import RigidTransform

# Disparities at or below this are treated as invalid (guards the depth
# division; the far-range cutoff is the band filter's job).
EPS_DISPARITY = 1e-3

# Default depth band for road-scene sequences, both ends configurable.
DEFAULT_DEPTH_BAND = (1.0, 80.0)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo pair: left-camera intrinsics, baseline (m) and the
    camera-to-IMU extrinsic transform (maps left-camera coordinates into the
    IMU/body frame)."""

    intrinsics: CameraIntrinsics
    baseline: float
    cam_to_imu: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")

    def left_to_right(self):
        """Transform taking left-camera coordinates to right-camera
        coordinates (pure -x translation for a rectified rig)."""
        return RigidTransform(
            self.cam_to_imu.rotation.identity(), np.array([-self.baseline, 0.0, 0.0])
        )


class _PixelGrid:
    """Shared shape/validity plumbing for per-pixel maps."""

    def __init__(self, values, valid):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("per-pixel map must be 2-D")
        if valid is None:
            valid = np.isfinite(values)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != values.shape:
            raise ValueError("validity mask shape mismatch")
        self.values = values
        self.valid = valid

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


class DisparityMap(_PixelGrid):
    """Per-pixel horizontal disparity in pixels; valid pixels are > 0."""

    def __init__(self, values, valid=None):
        super().__init__(values, valid)
        self.valid &= self.values > 0


class DepthMap(_PixelGrid):
    """Per-pixel depth in meters along the optical axis."""

    def __init__(self, values, valid=None):
        super().__init__(values, valid)
        self.valid &= self.values > 0


@dataclass(frozen=True)
class PointCloud:
    """3-D points (meters, left-camera frame) with per-point source pixel.

    ``source_pixels`` holds (x, y) pixel coordinates; these are float so
    synthetic exact clouds can keep sub-pixel anchor positions.
    """

    points: np.ndarray
    source_pixels: np.ndarray

    def __post_init__(self):
        pts = np.array(np.asarray(self.points, dtype=float).reshape(-1, 3))
        pix = np.array(np.asarray(self.source_pixels, dtype=float).reshape(-1, 2))
        if len(pts) != len(pix):
            raise ValueError("points and source_pixels must have equal length")
        pts.flags.writeable = False
        pix.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_pixels", pix)

    def __len__(self):
        return len(self.points)


def disparity_to_depth(disp: DisparityMap, rig: StereoRig) -> DepthMap:
    """depth = fx * baseline / disparity per valid pixel.

    Pixels with disparity <= EPS_DISPARITY are invalidated, never raised on:
    zero disparity is an expected property of real disparity maps.
    """
    scale = rig.intrinsics.fx * rig.baseline
    valid = disp.valid & (disp.values > EPS_DISPARITY)
    depth = np.zeros_like(disp.values)
    np.divide(scale, disp.values, out=depth, where=valid)
    return DepthMap(depth, valid)


def depth_band_filter(depth: DepthMap, d_near: float, d_far: float) -> DepthMap:
    """Invalidate pixels with depth outside the open interval (d_near, d_far)."""
    if not (0 <= d_near < d_far):
        raise ValueError(f"invalid depth band ({d_near}, {d_far}): need 0 <= near < far")
    valid = depth.valid & (depth.values > d_near) & (depth.values < d_far)
    return DepthMap(depth.values.copy(), valid)


def depth_to_pointcloud(depth: DepthMap, k: CameraIntrinsics) -> PointCloud:
    """Back-project every valid pixel: point = K^-1 * depth * (x, y, 1).

    Output order is row-major pixel order.
    """
    ys, xs = np.nonzero(depth.valid)
    z = depth.values[ys, xs]
    x = (xs - k.cx) / k.fx * z
    y = (ys - k.cy) / k.fy * z
    points = np.column_stack([x, y, z])
    pixels = np.column_stack([xs, ys]).astype(float)
    return PointCloud(points, pixels)


def project_point(p, k: CameraIntrinsics):
    """Project a camera-frame point to pixel coordinates.

    Raises GeometryError for non-positive depth (behind the camera).
    """
    p = np.asarray(p, dtype=float).reshape(3)
    if p[2] <= 0:
        raise GeometryError(f"point has non-positive depth {p[2]}")
    return (k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy)


def project_points(pts, k: CameraIntrinsics):
    """Vectorized projection of (N, 3) points.

    Returns (pixels (N, 2), in_front (N,) bool); pixels of behind-camera
    points are NaN rather than raising, so callers can mask.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    in_front = pts[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pts[:, 0] / pts[:, 2] + k.cx
        v = k.fy * pts[:, 1] / pts[:, 2] + k.cy
    pix = np.column_stack([u, v])
    pix[~in_front] = np.nan
    return pix, in_front
