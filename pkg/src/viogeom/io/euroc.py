"""ASL-layout dataset parsing/writing (EuRoC-style).

Layout under ``root``::

    mav0/imu0/data.csv                        timestamp [ns], gyro xyz, accel xyz
    mav0/cam0/data.csv                        timestamp [ns], filename
    mav0/cam0/data/<filename>                 left frames (never decoded here)
    mav0/disp0/<timestamp>.png                optional disparity per frame
    mav0/state_groundtruth_estimate0/data.csv timestamp, position, quaternion, ...

Sensor calibration is not read from the dataset; it enters through the run
configuration, so the rig is a required argument. Header lines start with
``#``. Ground-truth rows carry at least (t, px, py, pz, qw, qx, qy, qz);
trailing velocity/bias columns are accepted and ignored here except that
velocities (columns 8..10) are exposed when present.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from viogeom.errors import ParseError
from viogeom.evaluate import Trajectory
from viogeom.imu import ImuSample
from viogeom.io.manifest import SequenceManifest
from viogeom.se3 import RigidTransform, Rotation
from viogeom.stereo import StereoRig

NS_PER_S = 1_000_000_000


def _rows(path, expected_fields=None):
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            row = [tok.strip() for tok in row]
            if expected_fields is not None and len(row) != expected_fields:
                raise ParseError(
                    f"expected {expected_fields} fields, got {len(row)}",
                    path=str(path), line=lineno)
            yield lineno, row


def read_imu_csv(path):
    """IMU stream from an ASL data.csv. Empty data section yields []."""
    samples = []
    for lineno, row in _rows(path, expected_fields=7):
        try:
            t_ns = int(row[0])
            vals = [float(tok) for tok in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", path=str(path), line=lineno)
        samples.append(ImuSample(t_ns=t_ns, gyro=vals[0:3], accel=vals[3:6]))
    t = np.array([s.t_ns for s in samples], dtype=np.int64)
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise ParseError("IMU timestamps are not strictly increasing", path=str(path))
    return samples


def read_camera_csv(path):
    """(t_ns, filename) tuples from an ASL camera index."""
    frames = []
    for lineno, row in _rows(path):
        if len(row) < 2:
            raise ParseError("camera row needs timestamp and filename",
                             path=str(path), line=lineno)
        try:
            frames.append((int(row[0]), row[1]))
        except ValueError:
            raise ParseError("non-integer camera timestamp", path=str(path), line=lineno)
    return frames


def read_groundtruth_csv(path):
    """Trajectory (body frame) and per-entry world velocities (or None)."""
    times, poses, vels = [], [], []
    for lineno, row in _rows(path):
        if len(row) < 8:
            raise ParseError("ground-truth row needs at least 8 fields",
                             path=str(path), line=lineno)
        try:
            t_ns = int(row[0])
            vals = [float(tok) for tok in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", path=str(path), line=lineno)
        times.append(t_ns / NS_PER_S)
        rot = Rotation.from_quaternion(vals[3:7])
        poses.append(RigidTransform(rot, np.array(vals[0:3])))
        vels.append(np.array(vals[7:10]) if len(vals) >= 10 else None)
    traj = Trajectory(np.array(times), tuple(poses))
    velocities = None
    if vels and all(v is not None for v in vels):
        velocities = np.vstack(vels)
    return traj, velocities


def parse_euroc(root, rig: StereoRig):
    """Parse an ASL tree. Returns (manifest, imu_samples)."""
    root = Path(root)
    mav = root / "mav0"
    imu_csv = mav / "imu0" / "data.csv"
    cam_csv = mav / "cam0" / "data.csv"
    if not imu_csv.is_file():
        raise ParseError("missing imu0/data.csv", path=str(imu_csv))
    if not cam_csv.is_file():
        raise ParseError("missing cam0/data.csv", path=str(cam_csv))

    samples = read_imu_csv(imu_csv)
    frames = read_camera_csv(cam_csv)
    t_ns = [t for t, _ in frames]

    disp_dir = mav / "disp0"
    if disp_dir.is_dir():
        disparity = [disp_dir / f"{t}.png" for t in t_ns]
    else:
        disparity = [None] * len(t_ns)
    left = [mav / "cam0" / "data" / name for _, name in frames]
    right = [mav / "cam1" / "data" / name for _, name in frames]

    gt_csv = mav / "state_groundtruth_estimate0" / "data.csv"
    ground_truth = None
    if gt_csv.is_file():
        ground_truth, _ = read_groundtruth_csv(gt_csv)

    manifest = SequenceManifest(
        frame_t_ns=t_ns,
        left_image_paths=left,
        right_image_paths=right,
        disparity_paths=disparity,
        rig=rig,
        ground_truth=ground_truth,
        sequence=root.name,
    )
    return manifest, samples


# --------------------------------------------------------------------------
# writers
# --------------------------------------------------------------------------

IMU_HEADER = ("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],"
              "w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],"
              "a_RS_S_z [m s^-2]")
CAM_HEADER = "#timestamp [ns],filename"
GT_HEADER = ("#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],"
             "q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],"
             "v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1]")


def write_imu_csv(path, samples):
    with open(path, "w") as f:
        f.write(IMU_HEADER + "\n")
        for s in samples:
            fields = [str(s.t_ns)] + ["%.17g" % v for v in (*s.gyro, *s.accel)]
            f.write(",".join(fields) + "\n")


def write_camera_csv(path, frames):
    with open(path, "w") as f:
        f.write(CAM_HEADER + "\n")
        for t_ns, name in frames:
            f.write(f"{t_ns},{name}\n")


def _matrix_to_quaternion(m):
    # inverse of Rotation.from_quaternion, largest-pivot branch
    m00, m11, m22 = m[0, 0], m[1, 1], m[2, 2]
    if m22 < 0:
        if m00 > m11:
            t = 1.0 + m00 - m11 - m22
            q = np.array([m[2, 1] - m[1, 2], t, m[0, 1] + m[1, 0], m[2, 0] + m[0, 2]])
        else:
            t = 1.0 - m00 + m11 - m22
            q = np.array([m[0, 2] - m[2, 0], m[0, 1] + m[1, 0], t, m[1, 2] + m[2, 1]])
    else:
        if m00 < -m11:
            t = 1.0 - m00 - m11 + m22
            q = np.array([m[1, 0] - m[0, 1], m[2, 0] + m[0, 2], m[1, 2] + m[2, 1], t])
        else:
            t = 1.0 + m00 + m11 + m22
            q = np.array([t, m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    q *= 0.5 / np.sqrt(t)
    if q[0] < 0:
        q = -q
    return q


def write_groundtruth_csv(path, trajectory: Trajectory, velocities=None):
    with open(path, "w") as f:
        f.write(GT_HEADER + "\n")
        for i, (t, pose) in enumerate(zip(trajectory.times, trajectory.poses)):
            q = _matrix_to_quaternion(pose.rotation.m)
            v = velocities[i] if velocities is not None else np.zeros(3)
            fields = [str(round(t * NS_PER_S))]
            fields += ["%.17g" % x for x in pose.translation]
            fields += ["%.17g" % x for x in q]
            fields += ["%.17g" % x for x in v]
            f.write(",".join(fields) + "\n")
