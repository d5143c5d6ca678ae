"""Robust bias estimation from the gap between a preintegrated delta and a
trusted reference pose.

The reference tangent is interpreted in *delta space*: the trusted relative
pose with initial velocity and gravity already stripped (see
``viogeom.imu.delta_space_reference``). Without that compensation a single
(delta, reference) pair cannot constrain the bias at all, since velocity
and gravity shift the translation residual independently of it.

The residual is ``e = [e_r, e_p]`` with ``e_r = Log(dR^T R_ref)`` and
``e_p = p_ref - dp``, weighted by the preintegration's 6x6 information
matrix, wrapped in a Huber cost applied to the quadratic form (quadratic in
the residual below the threshold, linear growth above). Minimization is a
damped Gauss-Newton over (d_bg, d_ba) with the linearization refreshed by
full re-preintegration whenever a step leaves the trust region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from viogeom.errors import OptimizationError
from viogeom.imu import (
    DEFAULT_TRUST_REGION,
    ImuNoiseModel,
    ImuStatus,
    PreintegratedDelta,
    apply_bias_correction,
    preintegrate,
    reference_rotation_translation,
)
from viogeom.se3 import Rotation, Se3Tangent, so3_log, so3_right_jacobian_inv


@dataclass(frozen=True)
class StatusUpdateParams:
    huber_delta: float = 1.345
    max_iterations: int = 30
    step_tol: float = 1e-10
    damping_init: float = 1e-8
    trust_region: float = DEFAULT_TRUST_REGION

    def __post_init__(self):
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class PoseResidual:
    e_r: np.ndarray
    e_p: np.ndarray
    weighted_cost: float


@dataclass(frozen=True)
class StatusUpdateResult:
    status: ImuStatus
    converged: bool
    iterations: int
    cost: float
    cost_trace: tuple = ()  # objective after each accepted step, initial first


def huber(sq: float, delta: float):
    """Huber on a squared Mahalanobis form.

    Returns (rho, d rho / d sq); rho == sq while sqrt(sq) <= delta, then
    grows linearly in sqrt(sq).
    """
    if sq < 0:
        raise ValueError("squared form must be non-negative")
    u = np.sqrt(sq)
    if u <= delta:
        return sq, 1.0
    return 2.0 * delta * u - delta * delta, delta / u


def _raw_residual(delta: PreintegratedDelta, reference: Se3Tangent):
    r_ref, p_ref = reference_rotation_translation(reference)
    e_r = so3_log(Rotation(np.ascontiguousarray(delta.delta_r.m.T @ r_ref.m)))
    e_p = p_ref - delta.delta_p
    return e_r, e_p, r_ref


def pose_residual(delta: PreintegratedDelta, reference: Se3Tangent,
                  information=None, huber_delta: float = 1.345) -> PoseResidual:
    """Rotation/translation residual against a delta-space reference with
    its Huber-weighted scalar cost."""
    if information is None:
        information = delta.pose_information()
    e_r, e_p, _ = _raw_residual(delta, reference)
    e = np.concatenate([e_r, e_p])
    cost, _ = huber(float(e @ information @ e), huber_delta)
    return PoseResidual(e_r=e_r, e_p=e_p, weighted_cost=cost)


def _residual_and_jacobian(delta: PreintegratedDelta, reference: Se3Tangent):
    """Residual 6-vector and its exact Jacobian w.r.t. (d_bg, d_ba) at the
    current linearization point."""
    e_r, e_p, r_ref = _raw_residual(delta, reference)
    # e_r(d) = Log(Exp(-J_r_bg d) . E) with E = dR^T R_ref:
    # d e_r / d_bg = -Jr^-1(e_r) E^T J_r_bg
    e_mat = delta.delta_r.m.T @ r_ref.m
    de_r = -so3_right_jacobian_inv(e_r) @ e_mat.T @ delta.j_r_bg
    jac = np.zeros((6, 6))
    jac[0:3, 0:3] = de_r
    jac[3:6, 0:3] = -delta.j_p_bg
    jac[3:6, 3:6] = -delta.j_p_ba
    return np.concatenate([e_r, e_p]), jac


def _cost_terms(delta, reference, information, huber_delta):
    e, jac = _residual_and_jacobian(delta, reference)
    sq = float(e @ information @ e)
    rho, w = huber(sq, huber_delta)
    grad = 2.0 * w * jac.T @ (information @ e)
    hess = 2.0 * w * jac.T @ information @ jac
    return rho, grad, hess, e


def objective_and_gradient(samples, status: ImuStatus, reference: Se3Tangent,
                           noise: ImuNoiseModel, information=None,
                           huber_delta: float = 1.345):
    """Cost and its exact gradient w.r.t. the 6 bias parameters (bg, ba),
    re-preintegrating at ``status``. Useful for derivative checking."""
    delta = preintegrate(samples, status, noise)
    if information is None:
        information = delta.pose_information()
    rho, grad, _, _ = _cost_terms(delta, reference, information, huber_delta)
    return rho, grad


def _solve_damped(hess, grad, damping):
    """Levenberg-style solve with escalating damping on singular systems."""
    lam = damping
    for _ in range(8):
        try:
            return np.linalg.solve(hess + lam * np.eye(6), -grad), lam
        except np.linalg.LinAlgError:
            lam = max(lam * 10.0, 1e-12)
    raise OptimizationError("normal equations remained singular after damped retries")


def update_status(samples, prior: ImuStatus, reference: Se3Tangent,
                  noise: ImuNoiseModel,
                  params: StatusUpdateParams = StatusUpdateParams()) -> StatusUpdateResult:
    """Estimate the bias that reconciles the preintegrated motion with a
    trusted delta-space reference pose.

    Damped Gauss-Newton; steps are only accepted when they do not increase
    the robust objective, so the objective is non-increasing over accepted
    steps. Returns the best-so-far status with ``converged=False`` when the
    iteration budget runs out.
    """
    return _minimize([(list(samples), reference)], prior, noise, params)


def update_status_windows(windows, prior: ImuStatus, noise: ImuNoiseModel,
                          params: StatusUpdateParams = StatusUpdateParams()) -> StatusUpdateResult:
    """Aggregate variant over several (samples, reference) pairs sharing one
    bias state; better conditioned than a single exactly-determined pair."""
    return _minimize([(list(s), r) for s, r in windows], prior, noise, params)


def _minimize(pairs, prior, noise, params):
    if not pairs:
        raise ValueError("need at least one (samples, reference) window")

    def build(bias):
        deltas = [preintegrate(s, bias, noise) for s, _ in pairs]
        infos = [d.pose_information() for d in deltas]
        return deltas, infos

    def total_cost(ds, infos):
        return sum(
            _cost_terms(d, ref, info, params.huber_delta)[0]
            for d, info, (_, ref) in zip(ds, infos, pairs)
        )

    def corrected(base_deltas, shift):
        return [
            apply_bias_correction(d, shift[:3], shift[3:], trust_region=np.inf)
            for d in base_deltas
        ]

    base_bias = prior  # linearization point of base_deltas
    base_deltas, infos = build(base_bias)
    bias = prior
    deltas = base_deltas
    cost = total_cost(deltas, infos)
    trace = [cost]
    lam = params.damping_init
    converged = False
    iterations = 0

    for _ in range(params.max_iterations):
        iterations += 1
        grad = np.zeros(6)
        hess = np.zeros((6, 6))
        for d, info, (_, ref) in zip(deltas, infos, pairs):
            _, g, h, _ = _cost_terms(d, ref, info, params.huber_delta)
            grad += g
            hess += h
        if np.linalg.norm(grad) < 1e-14:
            converged = True
            break

        accepted = False
        step = np.zeros(6)
        for _ in range(10):
            step, lam = _solve_damped(hess, grad, lam)
            candidate = ImuStatus(
                ba=np.asarray(bias.ba) + step[3:6], bg=np.asarray(bias.bg) + step[0:3]
            )
            shift = np.concatenate(
                [np.asarray(candidate.bg) - np.asarray(base_bias.bg),
                 np.asarray(candidate.ba) - np.asarray(base_bias.ba)]
            )
            refresh = (
                np.linalg.norm(shift[:3]) > params.trust_region
                or np.linalg.norm(shift[3:]) > params.trust_region
            )
            if refresh:
                cand_deltas, cand_infos = build(candidate)
            else:
                cand_deltas, cand_infos = corrected(base_deltas, shift), infos
            cand_cost = total_cost(cand_deltas, cand_infos)
            if cand_cost <= cost + 1e-15:
                accepted = True
                bias = candidate
                deltas, infos = cand_deltas, cand_infos
                if refresh:
                    base_bias = candidate
                    base_deltas = cand_deltas
                cost = cand_cost
                trace.append(cost)
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 4.0

        if not accepted:
            break
        if np.linalg.norm(step) < params.step_tol:
            converged = True
            break

    return StatusUpdateResult(status=bias, converged=converged,
                              iterations=iterations, cost=cost,
                              cost_trace=tuple(trace))
