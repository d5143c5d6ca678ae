"""IMU preintegration between camera frames with bias-correctable deltas.

Measurements are integrated in the body frame at the interval start with a
midpoint rule over consecutive samples. Gravity and initial velocity are
*not* part of the deltas; they are injected when converting a delta into a
relative pose (``delta_to_relative_se3``), so the caller must supply them
explicitly (from ground truth, a synthetic scene, or an estimator).

Timestamps are stored as integer nanoseconds so parsed datasets survive
round trips without drift; the float-seconds view is derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.errors import StreamError, TrustRegionError
from viogeom.se3 import (
    RigidTransform,
    Rotation,
    Se3Tangent,
    se3_log,
    skew,
    so3_exp,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
    so3_right_jacobian,
)

# sanity bounds on plausible bias magnitudes (generous for MEMS units)
MAX_GYRO_BIAS = 1.0  # rad/s
MAX_ACCEL_BIAS = 5.0  # m/s^2

# first-order bias corrections larger than this require re-preintegration
DEFAULT_TRUST_REGION = 0.1

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class ImuSample:
    """One timestamped gyro + accelerometer measurement (body frame).

    ``accel`` is specific force in m/s^2, ``gyro`` angular rate in rad/s.
    """

    t_ns: int
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        g = np.array(np.asarray(self.gyro, dtype=float).reshape(3))
        a = np.array(np.asarray(self.accel, dtype=float).reshape(3))
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValueError("IMU sample components must be finite")
        g.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "t_ns", int(self.t_ns))
        object.__setattr__(self, "gyro", g)
        object.__setattr__(self, "accel", a)

    @property
    def t(self):
        """Timestamp in seconds."""
        return self.t_ns / NS_PER_S

    @classmethod
    def from_seconds(cls, t, gyro, accel):
        return cls(round(t * NS_PER_S), gyro, accel)


@dataclass(frozen=True)
class ImuStatus:
    """Bias state: accelerometer bias ``ba`` (m/s^2), gyro bias ``bg`` (rad/s)."""

    ba: np.ndarray
    bg: np.ndarray

    def __post_init__(self):
        ba = np.array(np.asarray(self.ba, dtype=float).reshape(3))
        bg = np.array(np.asarray(self.bg, dtype=float).reshape(3))
        if not (np.all(np.isfinite(ba)) and np.all(np.isfinite(bg))):
            raise ValueError("bias components must be finite")
        if np.linalg.norm(ba) > MAX_ACCEL_BIAS or np.linalg.norm(bg) > MAX_GYRO_BIAS:
            raise ValueError("bias magnitude exceeds sanity bounds")
        ba.flags.writeable = False
        bg.flags.writeable = False
        object.__setattr__(self, "ba", ba)
        object.__setattr__(self, "bg", bg)

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def shifted(self, d_bg, d_ba):
        return ImuStatus(self.ba + np.asarray(d_ba, float), self.bg + np.asarray(d_bg, float))


@dataclass(frozen=True)
class ImuNoiseModel:
    """Continuous-time noise densities.

    ``gyro_noise`` rad/s/sqrt(Hz), ``accel_noise`` m/s^2/sqrt(Hz), and the
    bias random-walk densities in the same convention.
    """

    gyro_noise: float = 1.7e-4
    accel_noise: float = 2.0e-3
    gyro_bias_walk: float = 1.9e-5
    accel_bias_walk: float = 3.0e-3

    def __post_init__(self):
        if min(self.gyro_noise, self.accel_noise,
               self.gyro_bias_walk, self.accel_bias_walk) < 0:
            raise ValueError("noise densities must be non-negative")


@dataclass(frozen=True)
class PreintegratedDelta:
    """Accumulated motion increment between two frames.

    ``delta_v``/``delta_p`` live in the body frame at the interval start and
    exclude gravity and initial velocity. ``covariance`` is 9x9 over
    (rotation, velocity, position) error states; the bias Jacobians are the
    exact first derivatives of the discrete integration w.r.t. the bias used.
    """

    delta_r: Rotation
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt_total: float
    covariance: np.ndarray
    j_r_bg: np.ndarray
    j_v_bg: np.ndarray
    j_v_ba: np.ndarray
    j_p_bg: np.ndarray
    j_p_ba: np.ndarray
    bias_used: ImuStatus

    def pose_information(self):
        """Information matrix of the (rotation, position) residual: inverse
        of the corresponding 6x6 marginal covariance."""
        idx = np.array([0, 1, 2, 6, 7, 8])
        marginal = self.covariance[np.ix_(idx, idx)]
        return np.linalg.inv(marginal)


def _check_stream(samples):
    if len(samples) < 1:
        raise StreamError("empty IMU stream")
    t = np.array([s.t_ns for s in samples], dtype=np.int64)
    if np.any(np.diff(t) <= 0):
        bad = int(np.nonzero(np.diff(t) <= 0)[0][0])
        raise StreamError(
            f"non-monotone timestamps at samples {bad}..{bad + 1} "
            f"({t[bad]} ns -> {t[bad + 1]} ns)"
        )


def preintegrate(samples, status: ImuStatus, noise: ImuNoiseModel) -> PreintegratedDelta:
    """Integrate a stream of samples under the given bias state.

    Midpoint rule: each interval between consecutive samples uses the
    average of its two endpoint measurements. The internal covariance is
    propagated over 15 error states (rotation, velocity, position, gyro
    bias, accel bias) so the bias random walks show up in the returned
    9x9 pose/velocity marginal.
    """
    _check_stream(samples)

    dr = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    j_r_bg = np.zeros((3, 3))
    j_v_bg = np.zeros((3, 3))
    j_v_ba = np.zeros((3, 3))
    j_p_bg = np.zeros((3, 3))
    j_p_ba = np.zeros((3, 3))
    cov = np.zeros((15, 15))

    sq = lambda x: x * x
    eye3 = np.eye(3)

    for k in range(len(samples) - 1):
        s0, s1 = samples[k], samples[k + 1]
        dt = (s1.t_ns - s0.t_ns) / NS_PER_S
        w = 0.5 * (s0.gyro + s1.gyro) - status.bg
        a0 = s0.accel - status.ba
        a1 = s1.accel - status.ba

        theta = w * dt
        exp_theta = so3_exp(theta).m
        jr = so3_right_jacobian(theta)
        dr_next = dr @ exp_theta
        # midpoint of the *rotated* endpoint accelerations
        u = 0.5 * (dr @ a0 + dr_next @ a1)
        a0_skew = skew(a0)
        a1_skew = skew(a1)

        # error/noise propagation (first order, pre-update state)
        dv_dtheta = -0.5 * (dr @ a0_skew + dr_next @ a1_skew @ exp_theta.T) * dt
        f = np.eye(15)
        f[0:3, 0:3] = exp_theta.T
        f[0:3, 9:12] = -jr * dt
        f[3:6, 0:3] = dv_dtheta
        f[3:6, 9:12] = 0.5 * dr_next @ a1_skew @ jr * sq(dt)
        f[3:6, 12:15] = -0.5 * (dr + dr_next) * dt
        f[6:9, 0:3] = 0.5 * dv_dtheta * dt
        f[6:9, 3:6] = eye3 * dt
        f[6:9, 9:12] = 0.25 * dr_next @ a1_skew @ jr * sq(dt) * dt
        f[6:9, 12:15] = -0.25 * (dr + dr_next) * sq(dt)

        g = np.zeros((15, 12))
        g[0:3, 0:3] = jr * dt
        g[3:6, 3:6] = 0.5 * (dr + dr_next) * dt
        g[6:9, 3:6] = 0.25 * (dr + dr_next) * sq(dt)
        g[9:12, 6:9] = eye3
        g[12:15, 9:12] = eye3

        q = np.diag(
            [sq(noise.gyro_noise) / dt] * 3
            + [sq(noise.accel_noise) / dt] * 3
            + [sq(noise.gyro_bias_walk) * dt] * 3
            + [sq(noise.accel_bias_walk) * dt] * 3
        )
        cov = f @ cov @ f.T + g @ q @ g.T

        # exact first derivatives of the discrete recursion w.r.t. bias;
        # the rotated-midpoint acceleration couples through both the current
        # and the next rotation Jacobian
        j_r_next = exp_theta.T @ j_r_bg - jr * dt
        du_dbg = -0.5 * (dr @ a0_skew @ j_r_bg + dr_next @ a1_skew @ j_r_next)
        du_dba = -0.5 * (dr + dr_next)
        j_p_bg += j_v_bg * dt + 0.5 * du_dbg * sq(dt)
        j_p_ba += j_v_ba * dt + 0.5 * du_dba * sq(dt)
        j_v_bg += du_dbg * dt
        j_v_ba += du_dba * dt
        j_r_bg = j_r_next

        # state update: position from pre-update velocity
        dp = dp + dv * dt + 0.5 * u * sq(dt)
        dv = dv + u * dt
        dr = dr_next

    dt_total = (samples[-1].t_ns - samples[0].t_ns) / NS_PER_S
    return PreintegratedDelta(
        delta_r=Rotation.from_matrix_projected(dr),
        delta_v=dv,
        delta_p=dp,
        dt_total=dt_total,
        covariance=cov[:9, :9],
        j_r_bg=j_r_bg,
        j_v_bg=j_v_bg,
        j_v_ba=j_v_ba,
        j_p_bg=j_p_bg,
        j_p_ba=j_p_ba,
        bias_used=status,
    )


def apply_bias_correction(delta: PreintegratedDelta, d_bg, d_ba,
                          trust_region: float = DEFAULT_TRUST_REGION) -> PreintegratedDelta:
    """First-order update of a delta for a small bias change.

    Raises TrustRegionError when the correction leaves the linearization
    trust region; the caller should re-preintegrate instead.
    """
    d_bg = np.asarray(d_bg, dtype=float).reshape(3)
    d_ba = np.asarray(d_ba, dtype=float).reshape(3)
    if np.linalg.norm(d_bg) > trust_region or np.linalg.norm(d_ba) > trust_region:
        raise TrustRegionError(
            f"bias correction ({np.linalg.norm(d_bg):.3g} rad/s, "
            f"{np.linalg.norm(d_ba):.3g} m/s^2) exceeds trust region {trust_region}"
        )
    new_r = delta.delta_r.m @ so3_exp(delta.j_r_bg @ d_bg).m
    return PreintegratedDelta(
        delta_r=Rotation.from_matrix_projected(new_r),
        delta_v=delta.delta_v + delta.j_v_bg @ d_bg + delta.j_v_ba @ d_ba,
        delta_p=delta.delta_p + delta.j_p_bg @ d_bg + delta.j_p_ba @ d_ba,
        dt_total=delta.dt_total,
        covariance=delta.covariance,
        j_r_bg=delta.j_r_bg,
        j_v_bg=delta.j_v_bg,
        j_v_ba=delta.j_v_ba,
        j_p_bg=delta.j_p_bg,
        j_p_ba=delta.j_p_ba,
        bias_used=delta.bias_used.shifted(d_bg, d_ba),
    )


def delta_to_relative_se3(delta: PreintegratedDelta, v0, gravity,
                          frame0_rotation: Rotation) -> Se3Tangent:
    """Relative pose of the body at the interval end, expressed in the body
    frame at the interval start.

    ``v0`` is the start velocity *in the start body frame*; ``gravity`` is
    the world-frame gravity vector; ``frame0_rotation`` is world-from-body
    at the interval start.
    """
    v0 = np.asarray(v0, dtype=float).reshape(3)
    gravity = np.asarray(gravity, dtype=float).reshape(3)
    dt = delta.dt_total
    t_rel = (
        delta.delta_p
        + v0 * dt
        + 0.5 * (frame0_rotation.m.T @ gravity) * dt * dt
    )
    return se3_log(RigidTransform(delta.delta_r, t_rel))


def delta_space_reference(relative: Se3Tangent, v0, gravity,
                          frame0_rotation: Rotation, dt: float) -> Se3Tangent:
    """Strip initial velocity and gravity from a trusted relative pose so it
    can be compared against raw preintegrated deltas (inverse of
    ``delta_to_relative_se3``'s assembly)."""
    v0 = np.asarray(v0, dtype=float).reshape(3)
    gravity = np.asarray(gravity, dtype=float).reshape(3)
    t_rel = so3_left_jacobian(relative.omega) @ relative.upsilon
    dp = t_rel - v0 * dt - 0.5 * (frame0_rotation.m.T @ gravity) * dt * dt
    return se3_log(RigidTransform(so3_exp(relative.omega), dp))


def reference_rotation_translation(reference: Se3Tangent):
    """Rotation matrix and raw translation of a tangent-encoded reference."""
    r = so3_exp(reference.omega)
    t = so3_left_jacobian(reference.omega) @ reference.upsilon
    return r, t
