"""Trajectory composition from per-interval tangents and odometry metrics.

The relative-error metric follows the KITTI benchmark convention: over
windows of nominal path lengths (100..800 m by default) it reports the
translational error as a percentage of window length and the rotational
error in degrees per 100 m. Window ends are chosen as the first frame
whose accumulated ground-truth path length reaches the nominal length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.errors import RegistrationError
from viogeom.icp import estimate_rigid_transform
from viogeom.se3 import (
    RigidTransform,
    Se3Tangent,
    compose,
    inverse,
    se3_exp,
    so3_log,
    transform_points,
)

DEFAULT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)
DEFAULT_STRIDE = 10  # benchmark-style window stride; 1 evaluates every frame


@dataclass(frozen=True)
class Trajectory:
    """Timestamped world-from-body poses with strictly increasing times."""

    times: np.ndarray  # seconds
    poses: tuple

    def __post_init__(self):
        t = np.array(np.asarray(self.times, dtype=float).reshape(-1))
        poses = tuple(self.poses)
        if len(t) != len(poses):
            raise ValueError("times and poses must have equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0  # translation weight in the inertial loss
    beta_prime: float = 1.0  # translation weight in the fused loss

    def __post_init__(self):
        if self.beta <= 0 or self.beta_prime <= 0:
            raise ValueError("loss weights must be positive")


@dataclass(frozen=True)
class LengthBucket:
    t_rel_percent: float
    r_rel_deg_per_100m: float
    window_count: int


@dataclass(frozen=True)
class RelativeErrorReport:
    t_rel_percent: float
    r_rel_deg_per_100m: float
    per_length: dict = field(default_factory=dict)  # length (m) -> LengthBucket
    window_count: int = 0


def integrate_se3_chain(relatives, origin: RigidTransform,
                        origin_time: float = 0.0) -> Trajectory:
    """Chain per-interval tangents into absolute poses.

    ``relatives`` is a sequence of (timestamp, Se3Tangent); pose_k =
    pose_{k-1} * exp(tangent_k). The origin pose is stamped ``origin_time``.
    """
    times = [float(origin_time)]
    poses = [origin]
    for t, xi in relatives:
        t = float(t)
        if t <= times[-1]:
            raise ValueError(f"relative timestamps must increase, got {t} after {times[-1]}")
        poses.append(compose(poses[-1], se3_exp(xi)))
        times.append(t)
    return Trajectory(np.array(times), tuple(poses))


def _path_distances(trajectory):
    pos = trajectory.positions()
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def kitti_relative_errors(est: Trajectory, gt: Trajectory,
                          lengths=DEFAULT_LENGTHS,
                          stride: int = DEFAULT_STRIDE) -> RelativeErrorReport:
    """Average relative pose errors over ground-truth path-length windows.

    For start frame i and window length L, the end frame j is the first
    frame with gt path length >= dist(i) + L. The error transform is
    E = (gt_i^-1 gt_j)^-1 (est_i^-1 est_j); translation error is
    ||trans(E)|| / L as a percent, rotation error angle(E) / L scaled to
    degrees per 100 m. Windows too long for the trajectory are skipped.
    """
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) and not np.allclose(est.times, gt.times, atol=1e-9):
        raise ValueError("trajectories are not timestamp-aligned")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    dist = _path_distances(gt)
    per_length_acc = {float(l): [] for l in lengths}
    all_t, all_r = [], []

    for first in range(0, len(gt), stride):
        for l in lengths:
            l = float(l)
            j = int(np.searchsorted(dist, dist[first] + l, side="left"))
            if j >= len(gt):
                continue
            rel_gt = compose(inverse(gt.poses[first]), gt.poses[j])
            rel_est = compose(inverse(est.poses[first]), est.poses[j])
            err = compose(inverse(rel_gt), rel_est)
            t_err = float(np.linalg.norm(err.translation)) / l * 100.0
            r_err = (
                float(np.linalg.norm(so3_log(err.rotation)))
                * (180.0 / np.pi) * (100.0 / l)
            )
            per_length_acc[l].append((t_err, r_err))
            all_t.append(t_err)
            all_r.append(r_err)

    per_length = {}
    for l, rows in per_length_acc.items():
        if rows:
            arr = np.array(rows)
            per_length[l] = LengthBucket(
                t_rel_percent=float(arr[:, 0].mean()),
                r_rel_deg_per_100m=float(arr[:, 1].mean()),
                window_count=len(rows),
            )

    n = len(all_t)
    return RelativeErrorReport(
        t_rel_percent=float(np.mean(all_t)) if n else float("nan"),
        r_rel_deg_per_100m=float(np.mean(all_r)) if n else float("nan"),
        per_length=per_length,
        window_count=n,
    )


def loss_imu(pred: Se3Tangent, target: Se3Tangent, cfg: LossConfig = LossConfig()) -> float:
    """|| w - w_hat || + beta * || u - u_hat || for the inertial branch."""
    return float(
        np.linalg.norm(target.omega - pred.omega)
        + cfg.beta * np.linalg.norm(target.upsilon - pred.upsilon)
    )


def loss_vio(pred: Se3Tangent, target: Se3Tangent, cfg: LossConfig = LossConfig()) -> float:
    """Same form as loss_imu with the fused-branch weight."""
    return float(
        np.linalg.norm(target.omega - pred.omega)
        + cfg.beta_prime * np.linalg.norm(target.upsilon - pred.upsilon)
    )


def total_loss(l_flow: float, l_imu: float, l_vio: float) -> float:
    for name, v in (("l_flow", l_flow), ("l_imu", l_imu), ("l_vio", l_vio)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative, got {v}")
    return float(l_flow + l_imu + l_vio)


def ate_rmse(est: Trajectory, gt: Trajectory) -> float:
    """RMSE of position differences after a rigid alignment of the estimate
    onto the ground truth.

    Degenerate position geometry (e.g. a perfectly straight run, where the
    rotation is unobservable) falls back to a translation-only alignment of
    the centroids.
    """
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    gt_pos = gt.positions()
    est_pos = est.positions()
    try:
        align = estimate_rigid_transform(gt_pos, est_pos)
        aligned = transform_points(align, est_pos)
    except RegistrationError:
        aligned = est_pos + (gt_pos.mean(axis=0) - est_pos.mean(axis=0))
    return float(np.sqrt(np.mean(np.sum((gt_pos - aligned) ** 2, axis=1))))
