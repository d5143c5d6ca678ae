"""3-D scene flow between consecutive point clouds and its 2-D projections.

Masks are tri-state so consumers can tell "no data" apart from "suppressed
moving object":

* ``MASK_INVALID`` (0) — no flow available, value is (0, 0),
* ``MASK_VALID`` (1) — flow value is meaningful,
* ``MASK_DYNAMIC`` (2) — pixel belongs to a rejected (moving) match and is
  deliberately zeroed.

Two 2-D projection modes exist. ``paper`` divides the projected 3-D flow by
the anchor pixel's depth, which is exact only when both endpoints of the
flow share that depth; ``endpoint`` takes the difference of the two
projected endpoints and is geometrically exact, so it is the default for
supervision labels. The discrepancy between the two is observable via
:func:`flow_difference_image`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from viogeom.errors import GeometryError
from viogeom.icp import CorrespondenceSet
from viogeom.se3 import transform_points
from viogeom.stereo import DepthMap, PointCloud, StereoRig, project_points

MASK_INVALID = 0
MASK_VALID = 1
MASK_DYNAMIC = 2

DEFAULT_FILL_RADIUS = 3


class FlowField2D:
    """Dense per-pixel 2-D flow (pixels) with a tri-state mask.

    ``values`` is (H, W, 2) float32; non-valid pixels always carry (0, 0).
    """

    def __init__(self, values, mask):
        values = np.ascontiguousarray(values, dtype=np.float32)
        mask = np.ascontiguousarray(mask, dtype=np.uint8)
        if values.ndim != 3 or values.shape[2] != 2:
            raise ValueError("flow values must have shape (H, W, 2)")
        if mask.shape != values.shape[:2]:
            raise ValueError("mask shape must match flow field")
        if mask.max(initial=0) > MASK_DYNAMIC:
            raise ValueError("mask entries must be 0, 1 or 2")
        values[mask != MASK_VALID] = 0.0
        self.values = values
        self.mask = mask

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width, 2), np.float32), np.zeros((height, width), np.uint8))


@dataclass(frozen=True)
class FlowField3D:
    """Per-correspondence 3-D flow vectors (meters), anchored at previous-
    frame points with their source pixels."""

    vectors: np.ndarray  # (N, 3) prev - cur, the stored sign convention
    anchors: np.ndarray  # (N, 3) previous-frame points
    source_pixels: np.ndarray  # (N, 2) anchor pixels in the previous frame
    prev_indices: np.ndarray
    cur_indices: np.ndarray

    def __len__(self):
        return len(self.vectors)


def compute_3d_flow(prev: PointCloud, cur: PointCloud, corr: CorrespondenceSet) -> FlowField3D:
    """Per matched pair: vector = point_prev - point_cur."""
    pi = corr.prev_indices
    ci = corr.cur_indices
    if len(pi) and (pi.max() >= len(prev) or ci.max() >= len(cur)):
        raise ValueError("correspondence indices out of range")
    vectors = prev.points[pi] - cur.points[ci]
    return FlowField3D(
        vectors=vectors,
        anchors=prev.points[pi],
        source_pixels=prev.source_pixels[pi],
        prev_indices=pi,
        cur_indices=ci,
    )


def _anchor_pixel_indices(field, height, width):
    px = np.rint(field.source_pixels[:, 0]).astype(int)
    py = np.rint(field.source_pixels[:, 1]).astype(int)
    inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    return px, py, inside


def project_flow(field: FlowField3D, depth: DepthMap, rig: StereoRig,
                 view: str = "left", mode: str = "endpoint") -> FlowField2D:
    """Project 3-D flow to a sparse 2-D field at the anchor pixels.

    ``mode='paper'``: left view (vx, vy) = first two rows of
    K @ v3d / d(x, y); right view uses K @ (R @ v3d + t) / d(x, y) with
    (R, t) the rig's left-to-right transform.
    ``mode='endpoint'``: difference of the projections of the two flow
    endpoints (current minus previous), exact for any geometry.
    """
    if view not in ("left", "right"):
        raise ValueError(f"view must be 'left' or 'right', got {view!r}")
    if mode not in ("paper", "endpoint"):
        raise ValueError(f"mode must be 'paper' or 'endpoint', got {mode!r}")

    h, w = depth.height, depth.width
    out = FlowField2D.zeros(h, w)
    if len(field) == 0:
        return out
    px, py, inside = _anchor_pixel_indices(field, h, w)

    k = rig.intrinsics
    kmat = k.matrix()
    if mode == "paper":
        ok = inside & depth.valid[np.clip(py, 0, h - 1), np.clip(px, 0, w - 1)]
        if not ok.all():
            raise GeometryError("anchor pixel without valid depth in paper-mode projection")
        d = depth.values[py, px]
        v3 = field.vectors
        if view == "right":
            lr = rig.left_to_right()
            v3 = v3 @ lr.rotation.m.T + lr.translation
        proj = (v3 @ kmat.T) / d[:, None]
        uv = proj[:, :2].astype(np.float32)
        valid = np.ones(len(field), dtype=bool)
    else:
        prev_pts = field.anchors
        cur_pts = field.anchors - field.vectors  # vectors store prev - cur
        if view == "right":
            lr = rig.left_to_right()
            prev_pts = transform_points(lr, prev_pts)
            cur_pts = transform_points(lr, cur_pts)
        pix_prev, front_prev = project_points(prev_pts, k)
        pix_cur, front_cur = project_points(cur_pts, k)
        valid = front_prev & front_cur
        uv = np.zeros((len(field), 2), np.float32)
        uv[valid] = (pix_cur[valid] - pix_prev[valid]).astype(np.float32)

    keep = inside & valid
    out.values[py[keep], px[keep]] = uv[keep]
    out.mask[py[keep], px[keep]] = MASK_VALID
    return out


def _fill_offsets(radius):
    """Grid offsets within ``radius``, nearest first; ties break by (dy, dx)
    so the fill is fully deterministic."""
    offsets = []
    r = int(np.ceil(radius))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            d2 = dy * dy + dx * dx
            if d2 <= radius * radius:
                offsets.append((d2, dy, dx))
    offsets.sort()
    return [(dy, dx) for _, dy, dx in offsets]


def synthesize_dense_2d_flow(sparse: FlowField2D, prev_cloud: PointCloud,
                             dynamic_pixels=None,
                             fill_radius: float = DEFAULT_FILL_RADIUS) -> FlowField2D:
    """Densify a sparse flow field over every pixel that has a cloud point.

    Pixels carrying a correspondence keep their value. Remaining cloud
    pixels copy the nearest anchor within ``fill_radius`` (deterministic
    nearest-first scan), else stay invalid. ``dynamic_pixels`` (M, 2)
    pixels of rejected matches are zeroed and masked ``MASK_DYNAMIC``.
    """
    h, w = sparse.height, sparse.width
    values = sparse.values.copy()
    mask = sparse.mask.copy()

    px = np.rint(prev_cloud.source_pixels[:, 0]).astype(int)
    py = np.rint(prev_cloud.source_pixels[:, 1]).astype(int)
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    want = np.zeros((h, w), dtype=bool)
    want[py[inside], px[inside]] = True

    anchored = mask == MASK_VALID
    missing = want & ~anchored

    for dy, dx in _fill_offsets(fill_radius):
        if not missing.any():
            break
        src_y0 = max(0, -dy)
        src_y1 = min(h, h - dy)
        src_x0 = max(0, -dx)
        src_x1 = min(w, w - dx)
        if src_y0 >= src_y1 or src_x0 >= src_x1:
            continue
        dst = np.zeros_like(missing)
        dst[src_y0:src_y1, src_x0:src_x1] = anchored[
            src_y0 + dy : src_y1 + dy, src_x0 + dx : src_x1 + dx
        ]
        fill = missing & dst
        if fill.any():
            ys, xs = np.nonzero(fill)
            values[ys, xs] = values[ys + dy, xs + dx]
            mask[ys, xs] = MASK_VALID
            missing[ys, xs] = False

    if dynamic_pixels is not None and len(dynamic_pixels):
        dyn = np.asarray(dynamic_pixels, dtype=float).reshape(-1, 2)
        dx_i = np.rint(dyn[:, 0]).astype(int)
        dy_i = np.rint(dyn[:, 1]).astype(int)
        ok = (dx_i >= 0) & (dx_i < w) & (dy_i >= 0) & (dy_i < h)
        values[dy_i[ok], dx_i[ok]] = 0.0
        mask[dy_i[ok], dx_i[ok]] = MASK_DYNAMIC

    return FlowField2D(values, mask)


@dataclass(frozen=True)
class EpeStats:
    """Endpoint-error aggregate over pixels valid in both fields."""

    sum: float
    mean: float
    count: int


def epe(a: FlowField2D, b: FlowField2D) -> EpeStats:
    """Sum and mean of || v_a - v_b ||_2 over mutually valid pixels."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"flow fields differ in size: {(a.height, a.width)} vs {(b.height, b.width)}"
        )
    both = (a.mask == MASK_VALID) & (b.mask == MASK_VALID)
    diff = a.values[both].astype(np.float64) - b.values[both].astype(np.float64)
    norms = np.sqrt((diff ** 2).sum(axis=1))
    count = int(both.sum())
    total = float(norms.sum())
    return EpeStats(sum=total, mean=total / count if count else 0.0, count=count)


def flow_difference_image(a: FlowField2D, b: FlowField2D):
    """Per-pixel L2 difference where both fields are valid, NaN elsewhere."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("flow fields differ in size")
    out = np.full((a.height, a.width), np.nan, dtype=np.float32)
    both = (a.mask == MASK_VALID) & (b.mask == MASK_VALID)
    diff = a.values[both] - b.values[both]
    out[both] = np.sqrt((diff ** 2).sum(axis=1))
    return out
