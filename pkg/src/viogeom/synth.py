"""Self-consistent synthetic world for end-to-end verification.

A scene is a static landmark set (plus an optional constant-velocity
moving subset), a continuous-time trajectory made of constant-twist
segments, gravity, and the IMU/camera sampling setup. Everything the rest
of the package consumes — rendered depth/disparity, exact visible clouds,
IMU streams, ground-truth trajectories — derives from the one trajectory,
so cross-checks between modules close to numerical precision.

Within a segment the pose is ``T(tau) = T_k * Exp(tau * xi)`` for a
constant body twist ``xi = (omega, v_body)``; velocity, angular rate and
specific force are closed-form. Segment boundaries should sit on the IMU
sample grid (``vehicle_scene`` guarantees this) so sampled integrators
never straddle a twist change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.evaluate import Trajectory
from viogeom.imu import ImuNoiseModel, ImuSample, ImuStatus
from viogeom.se3 import (
    RigidTransform,
    Rotation,
    Se3Tangent,
    compose,
    inverse,
    se3_exp,
    transform_points,
)
from viogeom.stereo import DepthMap, DisparityMap, PointCloud, StereoRig

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class TwistSegment:
    """Constant body twist held for ``duration`` seconds."""

    duration: float
    omega: np.ndarray  # body angular rate, rad/s
    velocity: np.ndarray  # body linear velocity, m/s

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("segment duration must be positive")
        w = np.array(np.asarray(self.omega, dtype=float).reshape(3))
        v = np.array(np.asarray(self.velocity, dtype=float).reshape(3))
        w.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "velocity", v)


@dataclass(frozen=True)
class SyntheticScene:
    landmarks: np.ndarray  # (N, 3) world frame
    segments: tuple
    start_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    imu_rate: float = 200.0
    cam_rate: float = 10.0
    image_width: int = 640
    image_height: int = 240
    true_bias: ImuStatus = field(default_factory=ImuStatus.zero)
    noise: ImuNoiseModel = field(default_factory=lambda: ImuNoiseModel(0, 0, 0, 0))
    seed: int = 0
    dynamic_mask: np.ndarray = None  # (N,) bool, True = moving landmark
    dynamic_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.imu_rate <= 0 or self.cam_rate <= 0:
            raise ValueError("sampling rates must be positive")
        lm = np.array(np.asarray(self.landmarks, dtype=float).reshape(-1, 3))
        lm.flags.writeable = False
        object.__setattr__(self, "landmarks", lm)
        if self.dynamic_mask is None:
            mask = np.zeros(len(lm), dtype=bool)
        else:
            mask = np.array(np.asarray(self.dynamic_mask, dtype=bool).reshape(-1))
            if len(mask) != len(lm):
                raise ValueError("dynamic mask length must match landmark count")
        mask.flags.writeable = False
        object.__setattr__(self, "dynamic_mask", mask)
        dv = np.array(np.asarray(self.dynamic_velocity, dtype=float).reshape(3))
        dv.flags.writeable = False
        object.__setattr__(self, "dynamic_velocity", dv)
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("scene needs at least one twist segment")

    @property
    def duration(self):
        return sum(s.duration for s in self.segments)


@dataclass(frozen=True)
class TrajectorySample:
    pose: RigidTransform  # world-from-body
    velocity_world: np.ndarray
    angular_rate_body: np.ndarray
    specific_force_body: np.ndarray


def _segment_starts(scene):
    starts = [0.0]
    poses = [scene.start_pose]
    for seg in scene.segments:
        starts.append(starts[-1] + seg.duration)
        poses.append(compose(poses[-1], se3_exp(
            Se3Tangent(seg.omega * seg.duration, seg.velocity * seg.duration))))
    return starts, poses


def sample_trajectory(scene: SyntheticScene, t: float) -> TrajectorySample:
    """Closed-form pose and derivatives at time ``t`` in [0, duration]."""
    eps = 1e-12
    if t < -eps or t > scene.duration + eps:
        raise ValueError(f"t={t} outside trajectory span [0, {scene.duration}]")
    starts, poses = _segment_starts(scene)
    # pick the segment containing t; the final boundary belongs to the last
    k = int(np.searchsorted(np.array(starts[1:]), t, side="right"))
    k = min(k, len(scene.segments) - 1)
    seg = scene.segments[k]
    tau = t - starts[k]
    pose = compose(poses[k], se3_exp(Se3Tangent(seg.omega * tau, seg.velocity * tau)))
    r = pose.rotation.m
    v_world = r @ seg.velocity
    # a_world = d/dt (R v_b) = R (omega x v_b); specific force adds -g
    f_body = np.cross(seg.omega, seg.velocity) - r.T @ scene.gravity
    return TrajectorySample(
        pose=pose,
        velocity_world=v_world,
        angular_rate_body=np.asarray(seg.omega),
        specific_force_body=f_body,
    )


def landmark_positions(scene: SyntheticScene, t: float):
    pts = scene.landmarks.copy()
    if scene.dynamic_mask.any():
        pts[scene.dynamic_mask] += scene.dynamic_velocity * t
    return pts


def _camera_frame_points(scene, t, rig):
    body = sample_trajectory(scene, t).pose
    cam_pose = compose(body, rig.cam_to_imu)  # world-from-camera
    return transform_points(inverse(cam_pose), landmark_positions(scene, t))


def _visible(scene, t, rig):
    """Indices, camera points and exact pixel positions of z-buffer winners."""
    k = rig.intrinsics
    pts = _camera_frame_points(scene, t, rig)
    idx = np.nonzero(pts[:, 2] > 1e-6)[0]
    pts = pts[idx]
    u = k.fx * pts[:, 0] / pts[:, 2] + k.cx
    v = k.fy * pts[:, 1] / pts[:, 2] + k.cy
    px = np.rint(u).astype(int)
    py = np.rint(v).astype(int)
    inside = (px >= 0) & (px < scene.image_width) & (py >= 0) & (py < scene.image_height)
    idx, pts, u, v, px, py = idx[inside], pts[inside], u[inside], v[inside], px[inside], py[inside]

    # z-buffer on the integer pixel grid: nearest depth wins, ties to the
    # lowest landmark index
    order = np.lexsort((idx, pts[:, 2], py, px))
    px_o, py_o = px[order], py[order]
    cell = px_o.astype(np.int64) * scene.image_height + py_o
    first = np.ones(len(cell), dtype=bool)
    first[1:] = cell[1:] != cell[:-1]
    win = order[first]
    return idx, pts, u, v, px, py, win


def render_frame(scene: SyntheticScene, t: float, rig: StereoRig):
    """Project landmarks to a depth/disparity image pair.

    Depth carries the exact z of the winning landmark at each hit pixel;
    disparity is its exact fx*b/z, so the two stay exact inverses.
    """
    h, w = scene.image_height, scene.image_width
    idx, pts, u, v, px, py, win = _visible(scene, t, rig)
    depth = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    depth[py[win], px[win]] = pts[win, 2]
    valid[py[win], px[win]] = True
    disparity = np.zeros((h, w))
    disparity[valid] = rig.intrinsics.fx * rig.baseline / depth[valid]
    return DepthMap(depth, valid.copy()), DisparityMap(disparity, valid.copy())


def visible_points(scene: SyntheticScene, t: float, rig: StereoRig):
    """Exact camera-frame cloud of the same landmarks ``render_frame``
    keeps, with float sub-pixel source positions.

    Returns (PointCloud, landmark_indices).
    """
    idx, pts, u, v, px, py, win = _visible(scene, t, rig)
    cloud = PointCloud(pts[win], np.column_stack([u[win], v[win]]))
    return cloud, idx[win]


def exact_correspondences(scene, t0, t1, rig):
    """Clouds at t0/t1 restricted to landmarks visible in both frames, in
    matched order. Returns (cloud0, cloud1, landmark_indices)."""
    c0, i0 = visible_points(scene, t0, rig)
    c1, i1 = visible_points(scene, t1, rig)
    common, pos0, pos1 = np.intersect1d(i0, i1, return_indices=True)
    cloud0 = PointCloud(c0.points[pos0], c0.source_pixels[pos0])
    cloud1 = PointCloud(c1.points[pos1], c1.source_pixels[pos1])
    return cloud0, cloud1, common


def synthesize_imu(scene: SyntheticScene):
    """Sampled gyro/accel stream: truth plus true bias plus seeded noise."""
    dt_ns = round(NS_PER_S / scene.imu_rate)
    n = int(round(scene.duration * scene.imu_rate)) + 1
    rng = np.random.Generator(np.random.Philox(key=scene.seed))
    sigma_g = scene.noise.gyro_noise * np.sqrt(scene.imu_rate)
    sigma_a = scene.noise.accel_noise * np.sqrt(scene.imu_rate)
    samples = []
    for k in range(n):
        t_ns = k * dt_ns
        s = sample_trajectory(scene, t_ns / NS_PER_S)
        gyro = s.angular_rate_body + scene.true_bias.bg
        accel = s.specific_force_body + scene.true_bias.ba
        if sigma_g > 0:
            gyro = gyro + rng.normal(0.0, sigma_g, 3)
        if sigma_a > 0:
            accel = accel + rng.normal(0.0, sigma_a, 3)
        samples.append(ImuSample(t_ns=t_ns, gyro=gyro, accel=accel))
    return samples


def camera_times_ns(scene: SyntheticScene):
    dt_ns = round(NS_PER_S / scene.cam_rate)
    n = int(round(scene.duration * scene.cam_rate)) + 1
    return [k * dt_ns for k in range(n)]


def ground_truth_trajectory(scene: SyntheticScene, rig: StereoRig = None,
                            frame: str = "body") -> Trajectory:
    """Ground truth at camera times; ``frame='camera'`` composes in the rig
    extrinsics (odometry-benchmark convention for stereo sequences)."""
    if frame not in ("body", "camera"):
        raise ValueError("frame must be 'body' or 'camera'")
    times_ns = camera_times_ns(scene)
    poses = []
    for t_ns in times_ns:
        pose = sample_trajectory(scene, t_ns / NS_PER_S).pose
        if frame == "camera":
            if rig is None:
                raise ValueError("camera-frame ground truth needs the rig")
            pose = compose(pose, rig.cam_to_imu)
        poses.append(pose)
    return Trajectory(np.asarray(times_ns, np.int64) / NS_PER_S, tuple(poses))


def ground_truth_velocities(scene: SyntheticScene):
    """World-frame velocity at each camera time."""
    return np.array([
        sample_trajectory(scene, t_ns / NS_PER_S).velocity_world
        for t_ns in camera_times_ns(scene)
    ])


def vehicle_scene(duration=60.0, speed=12.0, landmark_count=12000,
                  dynamic_count=0, dynamic_speed=2.0, imu_rate=200.0,
                  cam_rate=10.0, rig: StereoRig = None, seed=0,
                  image_width=640, image_height=240,
                  true_bias: ImuStatus = None,
                  noise: ImuNoiseModel = None) -> SyntheticScene:
    """Forward drive with gentle yaw segments and a landmark corridor.

    The body frame is x-forward / z-up; pair it with a camera mounted
    z-forward via the usual robotics-to-optical rotation. Segment lengths
    are multiples of the IMU sample period so sampled integrators never
    straddle a twist change.
    """
    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 8) | 0x5C))

    # yaw-segment plan: ~5 s per segment, curvature small enough that the
    # corridor stays in front of the camera
    segments = []
    remaining = duration
    while remaining > 1e-9:
        seg_len = min(5.0, remaining)
        seg_len = max(round(seg_len * imu_rate) / imu_rate, 1.0 / imu_rate)
        yaw_rate = rng.uniform(-0.06, 0.06)
        segments.append(TwistSegment(
            duration=seg_len,
            omega=np.array([0.0, 0.0, yaw_rate]),
            velocity=np.array([speed, 0.0, 0.0]),
        ))
        remaining -= seg_len

    scene_probe = SyntheticScene(
        landmarks=np.zeros((1, 3)), segments=tuple(segments),
        imu_rate=imu_rate, cam_rate=cam_rate,
        image_width=image_width, image_height=image_height,
    )
    # scatter landmarks in a tube around the path, biased ahead of the rig
    # in each local heading frame
    path_times = np.linspace(0.0, duration, max(int(duration * 2), 2))
    path = [sample_trajectory(scene_probe, t).pose for t in path_times]
    picks = rng.integers(0, len(path), landmark_count)
    local = np.column_stack([
        rng.uniform(5.0, 45.0, landmark_count),  # ahead along body +x
        rng.uniform(-18.0, 18.0, landmark_count),
        rng.uniform(-4.0, 8.0, landmark_count),
    ])
    landmarks = np.array([
        path[p].rotation.m @ off + path[p].translation
        for p, off in zip(picks, local)
    ])

    dynamic_mask = np.zeros(landmark_count, dtype=bool)
    if dynamic_count > 0:
        dynamic_mask[rng.choice(landmark_count, size=dynamic_count, replace=False)] = True

    return SyntheticScene(
        landmarks=landmarks,
        segments=tuple(segments),
        imu_rate=imu_rate,
        cam_rate=cam_rate,
        image_width=image_width,
        image_height=image_height,
        true_bias=true_bias if true_bias is not None else ImuStatus.zero(),
        noise=noise if noise is not None else ImuNoiseModel(0, 0, 0, 0),
        seed=seed,
        dynamic_mask=dynamic_mask,
        dynamic_velocity=np.array([0.0, dynamic_speed, 0.0]),
    )


# camera optical frame (z forward, x right, y down) expressed in a
# x-forward / z-up body frame
CAM_TO_BODY = Rotation(np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
]))


def emit_dataset(scene: SyntheticScene, layout: str, root, rig: StereoRig,
                 sequence: str = "00"):
    """Write the scene to disk in a parseable dataset layout.

    ``kitti``: sequences/<seq>/{times.txt, calib.txt, disp_2/*.png},
    poses/<seq>.txt (camera-frame ground truth) and an OXTS tree at the
    scene's IMU rate. ``euroc``: an ASL mav0 tree with imu0/cam0/disp0 and
    body-frame ground truth with velocities. Returns the written root.
    """
    from pathlib import Path

    from viogeom.io import euroc as euroc_io
    from viogeom.io import kitti as kitti_io
    from viogeom.io.formats import write_disparity_png16

    root = Path(root)
    samples = synthesize_imu(scene)
    times_ns = camera_times_ns(scene)

    if layout == "kitti":
        seq_dir = root / "sequences" / sequence
        disp_dir = seq_dir / "disp_2"
        disp_dir.mkdir(parents=True, exist_ok=True)
        (seq_dir / "image_2").mkdir(exist_ok=True)
        (seq_dir / "image_3").mkdir(exist_ok=True)
        (root / "poses").mkdir(exist_ok=True)
        kitti_io.write_kitti_times(seq_dir / "times.txt", times_ns)
        kitti_io.write_kitti_calib(seq_dir / "calib.txt", rig)
        kitti_io.write_kitti_poses(
            root / "poses" / f"{sequence}.txt",
            ground_truth_trajectory(scene, rig=rig, frame="camera"))
        kitti_io.write_kitti_oxts(root, samples)
        for i, t_ns in enumerate(times_ns):
            _, disp = render_frame(scene, t_ns / NS_PER_S, rig)
            write_disparity_png16(disp_dir / f"{i:06d}.png", disp)
    elif layout == "euroc":
        mav = root / "mav0"
        (mav / "imu0").mkdir(parents=True, exist_ok=True)
        (mav / "cam0" / "data").mkdir(parents=True, exist_ok=True)
        (mav / "disp0").mkdir(exist_ok=True)
        (mav / "state_groundtruth_estimate0").mkdir(exist_ok=True)
        euroc_io.write_imu_csv(mav / "imu0" / "data.csv", samples)
        frames = [(t_ns, f"{t_ns}.png") for t_ns in times_ns]
        euroc_io.write_camera_csv(mav / "cam0" / "data.csv", frames)
        euroc_io.write_groundtruth_csv(
            mav / "state_groundtruth_estimate0" / "data.csv",
            ground_truth_trajectory(scene, frame="body"),
            ground_truth_velocities(scene))
        for t_ns in times_ns:
            _, disp = render_frame(scene, t_ns / NS_PER_S, rig)
            write_disparity_png16(mav / "disp0" / f"{t_ns}.png", disp)
    else:
        raise ValueError(f"unknown layout {layout!r} (expected 'kitti' or 'euroc')")
    return root


def rk4_reference_delta(scene: SyntheticScene, t0: float, t1: float, rate: float):
    """Independent high-rate oracle for the preintegration delta.

    Integrates dR/dt = R [w]x, dv/dt = R f, dp/dt = v with classic RK4 on
    the true (noise-free, bias-free) signals, re-orthonormalizing R each
    step. Gravity and initial velocity are excluded, matching the delta
    definition.
    """
    steps = int(round((t1 - t0) * rate))
    h = (t1 - t0) / steps
    r = np.eye(3)
    v = np.zeros(3)
    p = np.zeros(3)

    def rates(t, r_, v_):
        s = sample_trajectory(scene, t)
        w = s.angular_rate_body
        f = s.specific_force_body
        wx = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        return r_ @ wx, r_ @ f, v_

    for k in range(steps):
        t = t0 + k * h
        k1r, k1v, k1p = rates(t, r, v)
        k2r, k2v, k2p = rates(t + h / 2, r + h / 2 * k1r, v + h / 2 * k1v)
        k3r, k3v, k3p = rates(t + h / 2, r + h / 2 * k2r, v + h / 2 * k2v)
        k4r, k4v, k4p = rates(t + h, r + h * k3r, v + h * k3v)
        r = r + h / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        p = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return Rotation.from_matrix_projected(r), v, p
