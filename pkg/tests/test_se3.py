import numpy as np
import pytest

from viogeom.se3 import (
    RigidTransform,
    Rotation,
    Se3Tangent,
    compose,
    inverse,
    se3_exp,
    se3_log,
    so3_exp,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
    transform_point,
    transform_points,
)


def random_rotvec(rng, max_angle=np.pi - 1e-3):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


class TestSo3:
    def test_exp_zero_is_identity(self):
        assert np.allclose(so3_exp(np.zeros(3)).m, np.eye(3))

    def test_quarter_turn_about_z(self):
        r = so3_exp([0.0, 0.0, np.pi / 2])
        assert np.allclose(r.m @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_log_identity(self):
        assert np.allclose(so3_log(Rotation.identity()), np.zeros(3))

    def test_log_half_turn_about_x(self):
        w = so3_log(Rotation(np.diag([1.0, -1.0, -1.0])))
        assert np.allclose(w, [np.pi, 0.0, 0.0], atol=1e-12)

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            w = random_rotvec(rng)
            assert np.linalg.norm(so3_log(so3_exp(w)) - w) < 1e-10

    def test_round_trip_small_angles(self):
        rng = np.random.default_rng(11)
        for scale in (1e-3, 1e-7, 1e-10, 0.0):
            w = random_rotvec(rng)
            w = w / max(np.linalg.norm(w), 1.0) * scale
            assert np.linalg.norm(so3_log(so3_exp(w)) - w) < 1e-12 + 1e-6 * scale

    def test_round_trip_near_pi(self):
        rng = np.random.default_rng(13)
        for gap in (1e-3, 1e-6, 1e-9):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            w = axis * (np.pi - gap)
            assert np.linalg.norm(so3_log(so3_exp(w)) - w) < 1e-9

    def test_exp_log_matrix_round_trip(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            r = so3_exp(random_rotvec(rng))
            assert np.max(np.abs(so3_exp(so3_log(r)).m - r.m)) < 1e-9

    def test_rotation_angle_equals_norm(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            w = random_rotvec(rng)
            assert abs(so3_exp(w).angle() - np.linalg.norm(w)) < 1e-10

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Rotation(np.eye(3) * 1.01)
        with pytest.raises(ValueError):
            Rotation(-np.eye(3))  # det -1

    def test_projected_constructor(self):
        rng = np.random.default_rng(23)
        r = so3_exp(random_rotvec(rng))
        noisy = r.m + 1e-7 * rng.standard_normal((3, 3))
        rp = Rotation.from_matrix_projected(noisy)
        assert np.max(np.abs(rp.m - r.m)) < 1e-6

    def test_quaternion_round_trip(self):
        r = Rotation.from_quaternion([np.cos(0.3), np.sin(0.3), 0.0, 0.0])
        assert np.allclose(so3_log(r), [0.6, 0.0, 0.0], atol=1e-12)


class TestJacobians:
    def test_left_jacobian_inverse_identity(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            w = random_rotvec(rng)
            assert np.allclose(
                so3_left_jacobian(w) @ so3_left_jacobian_inv(w), np.eye(3), atol=1e-10
            )

    def test_right_is_left_of_negated(self):
        rng = np.random.default_rng(31)
        w = random_rotvec(rng)
        assert np.allclose(so3_right_jacobian(w), so3_left_jacobian(-w))
        assert np.allclose(so3_right_jacobian_inv(w), so3_left_jacobian_inv(-w))

    def test_right_jacobian_perturbation_property(self):
        # Exp(w + e) ~ Exp(w) Exp(Jr(w) @ e) for small e
        rng = np.random.default_rng(37)
        w = random_rotvec(rng)
        e = 1e-6 * rng.standard_normal(3)
        lhs = so3_exp(w + e).m
        rhs = so3_exp(w).m @ so3_exp(so3_right_jacobian(w) @ e).m
        assert np.max(np.abs(lhs - rhs)) < 1e-11


class TestSe3:
    def test_zero_tangent_is_identity(self):
        t = se3_exp(Se3Tangent.zero())
        assert np.allclose(t.matrix(), np.eye(4))

    def test_pure_translation(self):
        xi = Se3Tangent(np.zeros(3), np.array([1.0, 0.0, 0.0]))
        t = se3_exp(xi)
        assert np.allclose(t.rotation.m, np.eye(3))
        assert np.allclose(t.translation, [1.0, 0.0, 0.0])

    def test_log_identity_is_zero(self):
        assert np.allclose(se3_log(RigidTransform.identity()).vector(), np.zeros(6))

    def test_log_pure_translation(self):
        t = RigidTransform(Rotation.identity(), np.array([1.0, 2.0, 3.0]))
        xi = se3_log(t)
        assert np.allclose(xi.omega, np.zeros(3))
        assert np.allclose(xi.upsilon, [1.0, 2.0, 3.0])

    def test_round_trip_random(self):
        rng = np.random.default_rng(41)
        for _ in range(300):
            xi = Se3Tangent(random_rotvec(rng), rng.uniform(-5, 5, 3))
            t = se3_exp(xi)
            back = se3_exp(se3_log(t))
            assert np.max(np.abs(back.matrix() - t.matrix())) < 1e-9

    def test_tangent_vector_order_is_omega_first(self):
        xi = Se3Tangent(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert np.allclose(xi.vector(), [1, 2, 3, 4, 5, 6])
        assert np.allclose(Se3Tangent.from_vector(xi.vector()).omega, [1, 2, 3])


class TestGroupOps:
    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            t = se3_exp(Se3Tangent(random_rotvec(rng), rng.uniform(-2, 2, 3)))
            ident = compose(t, inverse(t))
            assert np.max(np.abs(ident.matrix() - np.eye(4))) < 1e-9

    def test_transform_point_identity(self):
        p = np.array([0.3, -1.2, 4.0])
        assert np.allclose(transform_point(RigidTransform.identity(), p), p)

    def test_composition_acts_like_sequential_application(self):
        rng = np.random.default_rng(47)
        for _ in range(100):
            a = se3_exp(Se3Tangent(random_rotvec(rng), rng.uniform(-2, 2, 3)))
            b = se3_exp(Se3Tangent(random_rotvec(rng), rng.uniform(-2, 2, 3)))
            p = rng.uniform(-10, 10, 3)
            lhs = transform_point(compose(a, b), p)
            rhs = transform_point(a, transform_point(b, p))
            assert np.linalg.norm(lhs - rhs) < 1e-10

    def test_transform_points_matches_scalar(self):
        rng = np.random.default_rng(53)
        t = se3_exp(Se3Tangent(random_rotvec(rng), rng.uniform(-2, 2, 3)))
        pts = rng.uniform(-5, 5, (20, 3))
        batch = transform_points(t, pts)
        for i in range(len(pts)):
            assert np.allclose(batch[i], transform_point(t, pts[i]))

    def test_long_chain_stays_orthonormal(self):
        rng = np.random.default_rng(59)
        t = RigidTransform.identity()
        step = se3_exp(Se3Tangent(random_rotvec(rng, 0.3), rng.uniform(-1, 1, 3)))
        for _ in range(2000):
            t = compose(t, step)
        m = t.rotation.m
        assert np.max(np.abs(m.T @ m - np.eye(3))) < 1e-9
