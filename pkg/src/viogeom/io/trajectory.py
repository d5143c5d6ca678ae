"""Trajectory and tangent text files.

Two pose layouts are supported:

* plain rows of 12 floats: the row-major 3x4 [R|t] matrix (odometry
  benchmark style),
* timestamped rows: timestamp in seconds followed by the same 12 floats.

Tangent files carry per-interval relative motion: timestamp (ns), the
6-vector (omega, upsilon), and optionally a row-major 6x6 information or
covariance block. Floats are written with 17 significant digits so values
survive write/parse round trips exactly.
"""

from __future__ import annotations

import numpy as np

from viogeom.errors import ParseError
from viogeom.evaluate import Trajectory
from viogeom.se3 import RigidTransform, Se3Tangent

_F = "%.17g"


def _fmt_row(values):
    return " ".join(_F % v for v in values)


def _parse_floats(line, path, lineno):
    try:
        return [float(tok) for tok in line.split()]
    except ValueError as exc:
        raise ParseError(f"non-numeric value: {exc}", path=str(path), line=lineno)


def write_pose_rows(path, poses):
    with open(path, "w") as f:
        for pose in poses:
            f.write(_fmt_row(pose.matrix34().ravel()) + "\n")


def read_pose_rows(path):
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            vals = _parse_floats(line, path, lineno)
            if len(vals) != 12:
                raise ParseError(f"expected 12 values per pose row, got {len(vals)}",
                                 path=str(path), line=lineno)
            poses.append(RigidTransform.from_matrix(
                np.array(vals).reshape(3, 4), projected=True))
    return poses


def write_trajectory(path, trajectory: Trajectory):
    """Timestamped variant: seconds + 12 floats per row."""
    with open(path, "w") as f:
        for t, pose in zip(trajectory.times, trajectory.poses):
            f.write(_F % t + " " + _fmt_row(pose.matrix34().ravel()) + "\n")


def read_trajectory(path) -> Trajectory:
    times, poses = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            vals = _parse_floats(line, path, lineno)
            if len(vals) != 13:
                raise ParseError(
                    f"expected timestamp + 12 values per row, got {len(vals)}",
                    path=str(path), line=lineno)
            times.append(vals[0])
            poses.append(RigidTransform.from_matrix(
                np.array(vals[1:]).reshape(3, 4), projected=True))
    return Trajectory(np.array(times), tuple(poses))


def write_tangents(path, rows):
    """rows: iterable of (t_ns, Se3Tangent) or (t_ns, Se3Tangent, 6x6)."""
    with open(path, "w") as f:
        for row in rows:
            t_ns, xi = row[0], row[1]
            out = f"{int(t_ns)} " + _fmt_row(xi.vector())
            if len(row) > 2 and row[2] is not None:
                out += " " + _fmt_row(np.asarray(row[2]).reshape(36))
            f.write(out + "\n")


def read_tangents(path):
    """Returns list of (t_ns, Se3Tangent, 6x6 or None)."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            toks = line.split()
            try:
                t_ns = int(toks[0])
            except ValueError:
                raise ParseError("tangent row must start with an integer timestamp",
                                 path=str(path), line=lineno)
            vals = _parse_floats(" ".join(toks[1:]), path, lineno)
            if len(vals) == 6:
                block = None
            elif len(vals) == 42:
                block = np.array(vals[6:]).reshape(6, 6)
            else:
                raise ParseError(
                    f"expected 6 or 42 values after the timestamp, got {len(vals)}",
                    path=str(path), line=lineno)
            rows.append((t_ns, Se3Tangent.from_vector(vals[:6]), block))
    return rows
