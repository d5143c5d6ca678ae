"""Point-to-point ICP between consecutive point clouds.

The estimated transform maps current-frame points into the previous frame,
i.e. it is the relative pose of the camera at time t expressed in the
camera frame at time t-1. Correspondences rejected by the robust residual
gate are reported separately so downstream flow synthesis can zero the
matching pixels (moving-object suppression).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from viogeom.errors import RegistrationError
from viogeom.se3 import RigidTransform, Rotation, Se3Tangent, compose, se3_log
from viogeom.stereo import PointCloud

# 1.4826 * MAD estimates a Gaussian sigma from the median absolute deviation.
_MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class IcpParams:
    """Tuning knobs; defaults assume consecutive frames at 10-20 Hz where
    the identity is already a good initial guess."""

    max_iterations: int = 50
    convergence_tol: float = 1e-8
    max_pair_distance: float = 1.0
    trim_fraction: float = 0.2
    residual_reject_sigma: float = 3.0
    # absolute floor for the robust rejection threshold so numerically
    # perfect clouds (MAD ~ 0) do not reject their own inliers
    min_reject_distance: float = 1e-4
    voxel_size: float = 0.1
    downsample_above: int = 200_000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must be in [0, 1)")
        if self.max_pair_distance <= 0 or self.convergence_tol <= 0:
            raise ValueError("max_pair_distance and convergence_tol must be positive")


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched indices (previous cloud, current cloud) with residual
    distances in meters; sorted by current index, no duplicate current
    index."""

    prev_indices: np.ndarray
    cur_indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        pi = np.array(np.asarray(self.prev_indices, dtype=np.int64).reshape(-1))
        ci = np.array(np.asarray(self.cur_indices, dtype=np.int64).reshape(-1))
        d = np.array(np.asarray(self.distances, dtype=float).reshape(-1))
        if not (len(pi) == len(ci) == len(d)):
            raise ValueError("correspondence arrays must have equal length")
        if len(ci) and len(np.unique(ci)) != len(ci):
            raise ValueError("duplicate current-cloud index in correspondence set")
        order = np.argsort(ci, kind="stable")
        pi, ci, d = pi[order], ci[order], d[order]
        for arr in (pi, ci, d):
            arr.flags.writeable = False
        object.__setattr__(self, "prev_indices", pi)
        object.__setattr__(self, "cur_indices", ci)
        object.__setattr__(self, "distances", d)

    def __len__(self):
        return len(self.cur_indices)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform  # maps frame-t points into frame t-1
    correspondences: CorrespondenceSet  # inliers at the final transform
    rejected: CorrespondenceSet  # residual-gated outliers (dynamic candidates)
    mean_residual: float
    iterations: int
    converged: bool
    residual_history: tuple = ()


def nearest_correspondences(a: PointCloud, b: PointCloud, max_dist: float) -> CorrespondenceSet:
    """For each point of ``b``, its nearest point in ``a`` within
    ``max_dist``, via a kd-tree. Ties break to the lowest index."""
    if len(a) == 0 or len(b) == 0:
        raise RegistrationError("nearest_correspondences requires non-empty clouds")
    tree = cKDTree(a.points)
    dist, idx = tree.query(b.points, distance_upper_bound=max_dist)
    matched = np.isfinite(dist)
    cur = np.nonzero(matched)[0]
    return CorrespondenceSet(idx[matched], cur, dist[matched])


def estimate_rigid_transform(points_prev, points_cur) -> RigidTransform:
    """Least-squares rigid alignment minimizing
    sum || p_prev - (R @ p_cur + t) ||^2 via the cross-covariance SVD,
    with the reflection corrected so det(R) = +1."""
    p = np.asarray(points_prev, dtype=float).reshape(-1, 3)
    c = np.asarray(points_cur, dtype=float).reshape(-1, 3)
    if len(p) != len(c):
        raise ValueError("point arrays must have equal length")
    if len(p) < 3:
        raise RegistrationError(f"need >= 3 pairs, got {len(p)}")
    cp = p.mean(axis=0)
    cc = c.mean(axis=0)
    h = (c - cc).T @ (p - cp)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(1e-12 * s[0], 1e-300):
        raise RegistrationError("rank-deficient correspondence geometry (collinear or coincident points)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cp - r @ cc
    return RigidTransform(Rotation.from_matrix_projected(r), t)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Keep the first (row-major) point of each occupied voxel."""
    if leaf <= 0:
        raise ValueError("voxel leaf size must be positive")
    keys = np.floor(cloud.points / leaf).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    keep = np.sort(first)
    return PointCloud(cloud.points[keep], cloud.source_pixels[keep])


def _match(tree, points, max_dist):
    dist, idx = tree.query(points, distance_upper_bound=max_dist)
    matched = np.isfinite(dist)
    return dist, idx, matched


def icp(prev: PointCloud, cur: PointCloud, params: IcpParams = IcpParams(),
        initial: RigidTransform | None = None) -> IcpResult:
    """Trimmed iterative closest point.

    Alternates nearest-neighbor matching and rigid alignment until the
    incremental step norm drops below ``convergence_tol``. After the last
    iteration, matches whose residual exceeds
    ``residual_reject_sigma * robust sigma`` are split off into
    ``rejected``.
    """
    if len(prev) < 3 or len(cur) < 3:
        raise RegistrationError("icp requires clouds of size >= 3")
    if len(prev) > params.downsample_above:
        prev = voxel_downsample(prev, params.voxel_size)
    if len(cur) > params.downsample_above:
        cur = voxel_downsample(cur, params.voxel_size)

    tree = cKDTree(prev.points)
    transform = initial if initial is not None else RigidTransform.identity()
    r = transform.rotation.m
    t = transform.translation

    converged = False
    iterations = 0
    history = []
    for _ in range(params.max_iterations):
        moved = cur.points @ r.T + t
        dist, idx, matched = _match(tree, moved, params.max_pair_distance)
        n_matched = int(matched.sum())
        if n_matched < 3:
            raise RegistrationError(
                f"iteration {iterations}: only {n_matched} correspondences within "
                f"{params.max_pair_distance} m"
            )
        keep = matched.copy()
        if params.trim_fraction > 0.0 and n_matched > 3:
            cutoff = np.quantile(dist[matched], 1.0 - params.trim_fraction)
            keep &= dist <= cutoff
            if keep.sum() < 3:
                keep = matched
        history.append(float(dist[keep].mean()))

        step = estimate_rigid_transform(prev.points[idx[keep]], moved[keep])
        r = step.rotation.m @ r
        t = step.rotation.m @ t + step.translation
        iterations += 1
        step_norm = float(np.linalg.norm(se3_log(step).vector()))
        if step_norm < params.convergence_tol:
            converged = True
            break

    transform = RigidTransform(Rotation.from_matrix_projected(r), t)

    # final correspondence pass with robust residual rejection
    moved = cur.points @ transform.rotation.m.T + transform.translation
    dist, idx, matched = _match(tree, moved, params.max_pair_distance)
    if int(matched.sum()) < 3:
        raise RegistrationError("fewer than 3 correspondences at the final transform")
    res = dist[matched]
    med = np.median(res)
    sigma = _MAD_TO_SIGMA * np.median(np.abs(res - med))
    threshold = max(params.residual_reject_sigma * sigma, params.min_reject_distance)
    cur_idx = np.nonzero(matched)[0]
    inlier = res <= threshold
    inliers = CorrespondenceSet(idx[matched][inlier], cur_idx[inlier], res[inlier])
    rejected = CorrespondenceSet(idx[matched][~inlier], cur_idx[~inlier], res[~inlier])
    mean_residual = float(inliers.distances.mean()) if len(inliers) else 0.0

    return IcpResult(
        transform=transform,
        correspondences=inliers,
        rejected=rejected,
        mean_residual=mean_residual,
        iterations=iterations,
        converged=converged,
        residual_history=tuple(history),
    )


def stereo_se3(result: IcpResult) -> Se3Tangent:
    """Tangent 6-vector of a converged registration result."""
    if not result.converged:
        raise RegistrationError("refusing to log a non-converged registration")
    return se3_log(result.transform)
