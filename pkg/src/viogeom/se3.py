"""SO(3)/SE(3) rotations, rigid transforms and their exponential/logarithm maps.

Conventions used throughout the package:

* rotations are stored as 3x3 matrices acting on column vectors,
* a rigid transform maps points as ``p' = R @ p + t``,
* the 6-vector tangent is ordered rotation-first: ``(omega, upsilon)``,
  and every serialized tangent in this package uses that order,
* logarithms are canonical with rotation angle in ``[0, pi]``; at exactly
  pi the axis sign comes deterministically from the largest-diagonal
  quaternion branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Orthonormality tolerance enforced on every Rotation.
ORTHONORMAL_TOL = 1e-9
# Below this angle the exp/log/Jacobian coefficients switch to series.
SMALL_ANGLE = 1e-6


def skew(v):
    """Cross-product matrix of a 3-vector: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _polar_project(m):
    """Nearest rotation matrix in the Frobenius sense (det forced to +1)."""
    u, _, vt = np.linalg.svd(m)
    if np.linalg.det(u @ vt) < 0.0:
        u = u.copy()
        u[:, -1] *= -1.0
    return u @ vt


@dataclass(frozen=True)
class Rotation:
    """A validated element of SO(3)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValueError("matrix is not orthonormal within 1e-9")
        if abs(np.linalg.det(m) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("matrix determinant is not +1 within 1e-9")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def from_matrix_projected(cls, m):
        """Build from a matrix that is orthonormal only approximately.

        Projects onto SO(3) first; intended for parser boundaries where
        inputs carry limited printed precision.
        """
        return cls(_polar_project(np.asarray(m, dtype=float)))

    @classmethod
    def from_quaternion(cls, q):
        """Unit quaternion (w, x, y, z) to rotation matrix.

        Parser-boundary helper; the rest of the package works in matrix and
        rotation-vector form.
        """
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValueError("zero quaternion")
        w, x, y, z = q / n
        return cls(
            np.array(
                [
                    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
                ]
            )
        )

    def transpose(self):
        return Rotation(np.ascontiguousarray(self.m.T))

    def angle(self):
        """Rotation angle in [0, pi]."""
        return float(np.linalg.norm(so3_log(self)))


@dataclass(frozen=True)
class RigidTransform:
    """A validated element of SE(3): rotation plus translation in meters."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(np.asarray(self.translation, dtype=float).reshape(3))
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, projected=False):
        """From a 4x4 or 3x4 homogeneous matrix.

        ``projected=True`` re-orthonormalizes the rotation block (use for
        file input with limited precision).
        """
        m = np.asarray(m, dtype=float)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected 3x4 or 4x4 matrix, got {m.shape}")
        r = m[:3, :3]
        rot = Rotation.from_matrix_projected(r) if projected else Rotation(r)
        return cls(rot, m[:3, 3])

    def matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation.m
        out[:3, 3] = self.translation
        return out

    def matrix34(self):
        return self.matrix()[:3, :]


@dataclass(frozen=True)
class Se3Tangent:
    """Tangent 6-vector: rotation part ``omega`` (rad), translation part
    ``upsilon`` (m). Serialized order is omega first, everywhere."""

    omega: np.ndarray
    upsilon: np.ndarray

    def __post_init__(self):
        w = np.array(np.asarray(self.omega, dtype=float).reshape(3))
        u = np.array(np.asarray(self.upsilon, dtype=float).reshape(3))
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(u))):
            raise ValueError("tangent components must be finite")
        w.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "upsilon", u)

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def vector(self):
        return np.concatenate([self.omega, self.upsilon])


# --------------------------------------------------------------------------
# SO(3) maps and Jacobians
# --------------------------------------------------------------------------

def _exp_coeffs(theta):
    """A = sin(t)/t, B = (1-cos(t))/t^2, C = (t-sin(t))/t^3 with series
    fallbacks below SMALL_ANGLE."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)


def so3_exp(omega):
    """Rodrigues map from a rotation vector to a Rotation (total function)."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    a, b, _ = _exp_coeffs(theta)
    k = skew(omega)
    return Rotation(np.eye(3) + a * k + b * (k @ k))


def so3_log(r):
    """Rotation vector of ``r`` with angle in [0, pi].

    Implemented through quaternion extraction with the largest-diagonal
    pivot, which stays accurate for angles arbitrarily close to pi and has
    a deterministic axis sign at exactly pi.
    """
    m = r.m if isinstance(r, Rotation) else np.asarray(r, dtype=float)
    m00, m11, m22 = m[0, 0], m[1, 1], m[2, 2]
    if m22 < 0.0:
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
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    nv = float(np.linalg.norm(vec))
    if nv < 1e-9:
        # sin(theta/2) ~ theta/2: omega ~ 2*vec/w
        return 2.0 * vec / q[0]
    return (2.0 * np.arctan2(nv, q[0]) / nv) * vec


def so3_left_jacobian(omega):
    """Integral matrix V(omega) = I + B*[w]x + C*[w]x^2 (the SE(3) exp's
    translation coupling)."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    _, b, c = _exp_coeffs(theta)
    k = skew(omega)
    return np.eye(3) + b * k + c * (k @ k)


def so3_right_jacobian(omega):
    """Right Jacobian Jr(omega) = V(-omega)."""
    return so3_left_jacobian(-np.asarray(omega, dtype=float).reshape(3))


def _inv_jacobian_coeff(theta):
    """D in V^-1 = I - [w]x/2 + D*[w]x^2 with series fallback."""
    if theta < 1e-4:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0
    half = 0.5 * theta
    return (1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)


def so3_left_jacobian_inv(omega):
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    return np.eye(3) - 0.5 * k + _inv_jacobian_coeff(theta) * (k @ k)


def so3_right_jacobian_inv(omega):
    return so3_left_jacobian_inv(-np.asarray(omega, dtype=float).reshape(3))


# --------------------------------------------------------------------------
# SE(3) maps and group operations
# --------------------------------------------------------------------------

def se3_exp(xi):
    """Exponential of a tangent: R = exp(omega), t = V(omega) @ upsilon."""
    if not isinstance(xi, Se3Tangent):
        xi = Se3Tangent.from_vector(xi)
    r = so3_exp(xi.omega)
    t = so3_left_jacobian(xi.omega) @ xi.upsilon
    return RigidTransform(r, t)


def se3_log(t):
    """Canonical tangent of a rigid transform: omega = log(R),
    upsilon = V(omega)^-1 @ translation."""
    omega = so3_log(t.rotation)
    upsilon = so3_left_jacobian_inv(omega) @ t.translation
    return Se3Tangent(omega, upsilon)


def compose(a, b):
    """Group product a * b (apply b first, then a)."""
    m = a.rotation.m @ b.rotation.m
    # products of clean rotations drift at machine-epsilon level; project
    # before the constructor's 1e-9 validation can ever trip on long chains
    if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-12:
        m = _polar_project(m)
    return RigidTransform(Rotation(m), a.rotation.m @ b.translation + a.translation)


def inverse(t):
    rt = np.ascontiguousarray(t.rotation.m.T)
    return RigidTransform(Rotation(rt), -(rt @ t.translation))


def transform_point(t, p):
    p = np.asarray(p, dtype=float).reshape(3)
    return t.rotation.m @ p + t.translation


def transform_points(t, pts):
    """Vectorized transform of an (N, 3) point array."""
    pts = np.asarray(pts, dtype=float)
    return pts @ t.rotation.m.T + t.translation


def relative(a, b):
    """Pose of b expressed in a's frame: a^-1 * b."""
    return compose(inverse(a), b)
