"""Deterministic robustness-condition injectors.

Four conditions are supported: extrinsic mis-calibration by an exact angle,
IMU timestamp desynchronization (constant offset, or seeded per-sample
jitter), IMU sample dropping and camera frame dropping.

Every random draw comes from a Philox4x64-10 counter-based generator keyed
as ``(seed << 8) | stream_tag``, with one tag per injector, so a seed
replays byte-identically and another implementation of the same generator
reproduces the streams exactly. Composition order when several conditions
are enabled: miscalibrate, then desync, then drops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from viogeom.imu import ImuSample
from viogeom.se3 import RigidTransform, Rotation, so3_exp

# Philox stream tags (documented; part of the replay contract)
STREAM_MISCAL = 1
STREAM_DESYNC = 2
STREAM_IMU_DROP = 3
STREAM_CAM_DROP = 4

NS_PER_MS = 1_000_000


@dataclass(frozen=True)
class DegradationSpec:
    miscal_deg: float = 0.0
    desync_ms: float = 0.0
    desync_jitter: bool = False
    imu_drop_rate: float = 0.0
    cam_drop_rate: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.imu_drop_rate <= 1.0:
            raise ValueError("imu_drop_rate must be in [0, 1]")
        if not 0.0 <= self.cam_drop_rate <= 1.0:
            raise ValueError("cam_drop_rate must be in [0, 1]")
        if self.miscal_deg < 0:
            raise ValueError("miscal_deg must be non-negative")
        needs_seed = (
            self.imu_drop_rate > 0 or self.cam_drop_rate > 0
            or self.miscal_deg > 0 or (self.desync_jitter and self.desync_ms > 0)
        )
        if needs_seed and self.seed is None:
            raise ValueError("a seed is mandatory when any random condition is enabled")

    def any_enabled(self):
        return (self.miscal_deg > 0 or self.desync_ms != 0.0
                or self.imu_drop_rate > 0 or self.cam_drop_rate > 0)


def _generator(seed, stream_tag):
    return np.random.Generator(np.random.Philox(key=(int(seed) << 8) | stream_tag))


def miscalibrate(rig, angle_deg: float, seed: int):
    """Compose an exact ``angle_deg`` rotation (random unit axis) into the
    camera-to-IMU extrinsics; translation untouched."""
    if angle_deg < 0:
        raise ValueError("angle must be non-negative")
    if angle_deg == 0.0:
        return rig
    rng = _generator(seed, STREAM_MISCAL)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    delta = so3_exp(axis * np.deg2rad(angle_deg))
    old = rig.cam_to_imu
    perturbed = RigidTransform(
        Rotation(old.rotation.m @ delta.m), old.translation)
    return type(rig)(intrinsics=rig.intrinsics, baseline=rig.baseline,
                     cam_to_imu=perturbed)


def desync(samples, offset_ms: float, jitter: bool = False, seed: int | None = None):
    """Shift IMU timestamps.

    Constant mode adds exactly ``offset_ms`` to every sample. Jitter mode
    adds a per-sample uniform draw from [0, offset_ms] and re-sorts (stable,
    by shifted time then original position).
    """
    if offset_ms == 0.0:
        return list(samples)
    if not jitter:
        shift = round(offset_ms * NS_PER_MS)
        return [ImuSample(s.t_ns + shift, s.gyro, s.accel) for s in samples]
    if seed is None:
        raise ValueError("jittered desync requires a seed")
    rng = _generator(seed, STREAM_DESYNC)
    shifts = rng.uniform(0.0, offset_ms, len(samples))
    shifted = [
        ImuSample(s.t_ns + round(ms * NS_PER_MS), s.gyro, s.accel)
        for s, ms in zip(samples, shifts)
    ]
    order = sorted(range(len(shifted)), key=lambda i: (shifted[i].t_ns, i))
    return [shifted[i] for i in order]


def drop_imu(samples, rate: float, seed: int):
    """Drop each sample independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    samples = list(samples)
    if rate == 0.0:
        return samples
    rng = _generator(seed, STREAM_IMU_DROP)
    keep = rng.random(len(samples)) >= rate
    return [s for s, k in zip(samples, keep) if k]


def drop_frames(manifest, rate: float, seed: int):
    """Drop camera frames with probability ``rate``; the first and last
    frames always survive so interval endpoints stay defined."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    n = len(manifest)
    if rate == 0.0 or n == 0:
        return manifest
    rng = _generator(seed, STREAM_CAM_DROP)
    keep = rng.random(n) >= rate
    keep[0] = True
    keep[-1] = True
    idx = np.nonzero(keep)[0]

    gt = manifest.ground_truth
    if gt is not None:
        from viogeom.evaluate import Trajectory

        gt = Trajectory(gt.times[idx], tuple(gt.poses[i] for i in idx))
    return type(manifest)(
        frame_t_ns=[manifest.frame_t_ns[i] for i in idx],
        left_image_paths=[manifest.left_image_paths[i] for i in idx],
        right_image_paths=[manifest.right_image_paths[i] for i in idx],
        disparity_paths=[manifest.disparity_paths[i] for i in idx],
        rig=manifest.rig,
        ground_truth=gt,
        sequence=manifest.sequence,
    )


def apply_degradation(manifest, samples, spec: DegradationSpec):
    """Apply all enabled conditions in the documented order. Returns
    (manifest, samples)."""
    rig_changed = miscalibrate(manifest.rig, spec.miscal_deg, spec.seed or 0)
    if rig_changed is not manifest.rig:
        manifest = type(manifest)(
            frame_t_ns=manifest.frame_t_ns,
            left_image_paths=manifest.left_image_paths,
            right_image_paths=manifest.right_image_paths,
            disparity_paths=manifest.disparity_paths,
            rig=rig_changed,
            ground_truth=manifest.ground_truth,
            sequence=manifest.sequence,
        )
    samples = desync(samples, spec.desync_ms, jitter=spec.desync_jitter, seed=spec.seed)
    if spec.imu_drop_rate > 0:
        samples = drop_imu(samples, spec.imu_drop_rate, spec.seed)
    if spec.cam_drop_rate > 0:
        manifest = drop_frames(manifest, spec.cam_drop_rate, spec.seed)
    return manifest, samples
