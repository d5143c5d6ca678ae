"""KITTI odometry layout and raw OXTS parsing/writing.

Odometry layout under ``root``::

    sequences/<seq>/times.txt        frame times, seconds, one per line
    sequences/<seq>/calib.txt        "P0: <12 floats>" .. "P3: <12 floats>"
    sequences/<seq>/image_2, image_3 left/right frames (never decoded here)
    sequences/<seq>/<disparity_dir>  optional 16-bit PNG disparity per frame
    poses/<seq>.txt                  optional ground truth, 12 floats per row

Intrinsics come from the P2 projection row (fx, fy, cx, cy) and the
baseline from the P2/P3 horizontal offset: P3[0,3] = -fx * b relative to
P2. Ground-truth poses are left-camera world-from-camera.

Raw OXTS under ``root``::

    oxts/timestamps.txt              "YYYY-MM-DD HH:MM:SS.fffffffff"
    oxts/data/<frame>.txt            30 whitespace-separated fields

Body acceleration sits at fields 11..13 (ax, ay, az) and angular rate at
17..19 (wx, wy, wz), matching the raw-data development kit layout; the
fixture in the test suite freezes those offsets.
"""

from __future__ import annotations

import calendar
import re
import time
from pathlib import Path

import numpy as np

from viogeom.errors import ParseError
from viogeom.evaluate import Trajectory
from viogeom.imu import ImuSample
from viogeom.io.manifest import SequenceManifest
from viogeom.io.trajectory import read_pose_rows, write_pose_rows
from viogeom.se3 import RigidTransform
from viogeom.stereo import CameraIntrinsics, StereoRig

NS_PER_S = 1_000_000_000

OXTS_FIELD_COUNT = 30
OXTS_ACCEL_OFFSET = 11  # ax ay az
OXTS_GYRO_OFFSET = 17  # wx wy wz

_TS_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2}) (\d{2}):(\d{2}):(\d{2})\.(\d{1,9})$")


def _read_calib(path):
    rows = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError("calibration row without key", path=str(path), line=lineno)
            key, rest = line.split(":", 1)
            try:
                vals = [float(tok) for tok in rest.split()]
            except ValueError:
                raise ParseError(f"non-numeric calibration value in {key}",
                                 path=str(path), line=lineno)
            rows[key.strip()] = np.array(vals)
    return rows


def _read_times(path):
    t_ns = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                t_ns.append(round(float(line) * NS_PER_S))
            except ValueError:
                raise ParseError("non-numeric frame time", path=str(path), line=lineno)
    return t_ns


def parse_kitti_odometry(root, sequence, cam_to_imu=None,
                         disparity_dir="disp_2") -> SequenceManifest:
    """Parse one odometry sequence into a manifest.

    ``cam_to_imu`` supplies the extrinsic calibration (the odometry layout
    does not carry it); identity when omitted.
    """
    root = Path(root)
    seq_dir = root / "sequences" / str(sequence)
    times_path = seq_dir / "times.txt"
    calib_path = seq_dir / "calib.txt"
    if not times_path.is_file():
        raise ParseError("missing times.txt", path=str(times_path))
    if not calib_path.is_file():
        raise ParseError("missing calib.txt", path=str(calib_path))

    calib = _read_calib(calib_path)
    for key in ("P2", "P3"):
        if key not in calib:
            raise ParseError(f"calibration missing {key} row", path=str(calib_path))
        if calib[key].size != 12:
            raise ParseError(f"{key} row must hold 12 values", path=str(calib_path))
    p2 = calib["P2"].reshape(3, 4)
    p3 = calib["P3"].reshape(3, 4)
    fx, fy, cx, cy = p2[0, 0], p2[1, 1], p2[0, 2], p2[1, 2]
    if fx <= 0 or fy <= 0:
        raise ParseError("non-positive focal length in P2", path=str(calib_path))
    baseline = (p2[0, 3] - p3[0, 3]) / fx
    if baseline <= 0:
        raise ParseError(f"non-positive baseline {baseline} from P2/P3",
                         path=str(calib_path))
    rig = StereoRig(
        intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy),
        baseline=baseline,
        cam_to_imu=cam_to_imu if cam_to_imu is not None else RigidTransform.identity(),
    )

    t_ns = _read_times(times_path)
    n = len(t_ns)

    left = [seq_dir / "image_2" / f"{i:06d}.png" for i in range(n)]
    right = [seq_dir / "image_3" / f"{i:06d}.png" for i in range(n)]
    disp_root = seq_dir / disparity_dir
    if disp_root.is_dir():
        disparity = [disp_root / f"{i:06d}.png" for i in range(n)]
    else:
        disparity = [None] * n

    ground_truth = None
    poses_path = root / "poses" / f"{sequence}.txt"
    if poses_path.is_file():
        poses = read_pose_rows(poses_path)
        if len(poses) != n:
            raise ParseError(
                f"pose count {len(poses)} does not match {n} frames",
                path=str(poses_path))
        ground_truth = Trajectory(np.asarray(t_ns, np.int64) / NS_PER_S, tuple(poses))

    return SequenceManifest(
        frame_t_ns=t_ns,
        left_image_paths=left,
        right_image_paths=right,
        disparity_paths=disparity,
        rig=rig,
        ground_truth=ground_truth,
        sequence=str(sequence),
    )


def _parse_oxts_timestamp(line, path, lineno):
    m = _TS_RE.match(line.strip())
    if not m:
        raise ParseError(f"malformed timestamp {line.strip()!r}", path=str(path), line=lineno)
    year, month, day, hour, minute, sec = (int(m.group(i)) for i in range(1, 7))
    frac = m.group(7).ljust(9, "0")
    epoch_s = calendar.timegm((year, month, day, hour, minute, sec, 0, 0, 0))
    return epoch_s * NS_PER_S + int(frac)


def parse_kitti_oxts(root):
    """Parse an OXTS directory into an ImuSample stream."""
    root = Path(root)
    ts_path = root / "oxts" / "timestamps.txt"
    data_dir = root / "oxts" / "data"
    if not ts_path.is_file():
        raise ParseError("missing oxts/timestamps.txt", path=str(ts_path))
    if not data_dir.is_dir():
        raise ParseError("missing oxts/data directory", path=str(data_dir))

    t_ns = []
    with open(ts_path) as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                t_ns.append(_parse_oxts_timestamp(line, ts_path, lineno))

    files = sorted(data_dir.glob("*.txt"))
    if len(files) != len(t_ns):
        raise ParseError(
            f"{len(files)} data files but {len(t_ns)} timestamps", path=str(data_dir))

    samples = []
    for t, fp in zip(t_ns, files):
        with open(fp) as f:
            line = f.readline()
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError:
            raise ParseError("non-numeric OXTS field", path=str(fp), line=1)
        if len(vals) != OXTS_FIELD_COUNT:
            raise ParseError(
                f"expected {OXTS_FIELD_COUNT} OXTS fields, got {len(vals)}",
                path=str(fp), line=1)
        accel = vals[OXTS_ACCEL_OFFSET:OXTS_ACCEL_OFFSET + 3]
        gyro = vals[OXTS_GYRO_OFFSET:OXTS_GYRO_OFFSET + 3]
        samples.append(ImuSample(t_ns=t, gyro=gyro, accel=accel))

    t_arr = np.array([s.t_ns for s in samples], dtype=np.int64)
    if len(t_arr) > 1 and np.any(np.diff(t_arr) <= 0):
        raise ParseError("OXTS timestamps are not strictly increasing", path=str(ts_path))
    return samples


# --------------------------------------------------------------------------
# writers (used by the synthetic dataset emitter and the degradation tool)
# --------------------------------------------------------------------------

def write_kitti_calib(path, rig: StereoRig):
    k = rig.intrinsics
    p_left = np.array([[k.fx, 0.0, k.cx, 0.0], [0.0, k.fy, k.cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    p_right = p_left.copy()
    p_right[0, 3] = -k.fx * rig.baseline
    with open(path, "w") as f:
        for key in ("P0", "P1", "P2"):
            f.write(key + ": " + " ".join("%.17g" % v for v in p_left.ravel()) + "\n")
        f.write("P3: " + " ".join("%.17g" % v for v in p_right.ravel()) + "\n")


def write_kitti_times(path, t_ns_list):
    with open(path, "w") as f:
        for t in t_ns_list:
            f.write("%.9f\n" % (t / NS_PER_S))


def write_kitti_poses(path, trajectory: Trajectory):
    write_pose_rows(path, trajectory.poses)


def _format_oxts_timestamp(t_ns):
    # timestamps are absolute epoch nanoseconds; the datetime text is just
    # their rendering, so write/parse is an exact inverse pair
    sec, frac = divmod(int(t_ns), NS_PER_S)
    tm = time.gmtime(sec)
    return "%04d-%02d-%02d %02d:%02d:%02d.%09d" % (
        tm.tm_year, tm.tm_mon, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, frac)


def write_kitti_oxts(root, samples):
    """Emit samples in the raw OXTS layout (one data file per sample).

    Fields other than the accelerometer/gyro slots are zero.
    """
    root = Path(root)
    data_dir = root / "oxts" / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    with open(root / "oxts" / "timestamps.txt", "w") as f:
        for s in samples:
            f.write(_format_oxts_timestamp(s.t_ns) + "\n")
    for i, s in enumerate(samples):
        fields = ["0"] * OXTS_FIELD_COUNT
        for j in range(3):
            fields[OXTS_ACCEL_OFFSET + j] = "%.17g" % s.accel[j]
            fields[OXTS_GYRO_OFFSET + j] = "%.17g" % s.gyro[j]
        with open(data_dir / f"{i:010d}.txt", "w") as f:
            f.write(" ".join(fields) + "\n")
