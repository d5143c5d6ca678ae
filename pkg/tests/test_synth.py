import numpy as np
import pytest

from viogeom.icp import icp
from viogeom.imu import ImuNoiseModel, ImuStatus, preintegrate
from viogeom.se3 import (
    RigidTransform,
    Rotation,
    compose,
    inverse,
    so3_exp,
    transform_points,
)
from viogeom.stereo import CameraIntrinsics, StereoRig, depth_to_pointcloud, disparity_to_depth
from viogeom.synth import (
    CAM_TO_BODY,
    SyntheticScene,
    TwistSegment,
    exact_correspondences,
    ground_truth_trajectory,
    landmark_positions,
    render_frame,
    rk4_reference_delta,
    sample_trajectory,
    synthesize_imu,
    vehicle_scene,
    visible_points,
)

K = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=120.0)
RIG = StereoRig(intrinsics=K, baseline=0.5,
                cam_to_imu=RigidTransform(CAM_TO_BODY, np.zeros(3)))
GRAVITY = np.array([0.0, 0.0, -9.81])


def simple_scene(landmarks=None, segments=None, **kw):
    if landmarks is None:
        landmarks = np.array([[20.0, 0.0, 0.0]])
    if segments is None:
        segments = (TwistSegment(2.0, np.zeros(3), np.array([1.0, 0.0, 0.0])),)
    return SyntheticScene(landmarks=landmarks, segments=segments, **kw)


class TestSampleTrajectory:
    def test_straight_line_kinematics(self):
        scene = simple_scene()
        s = sample_trajectory(scene, 1.5)
        assert np.allclose(s.pose.translation, [1.5, 0, 0])
        assert np.allclose(s.velocity_world, [1.0, 0, 0])
        assert np.allclose(s.angular_rate_body, 0.0)
        assert np.allclose(s.specific_force_body, -GRAVITY)  # -R^T g with R=I

    def test_circle_centripetal_force(self):
        w, v = 0.5, 2.0  # radius r = v/w = 4
        scene = simple_scene(segments=(
            TwistSegment(10.0, np.array([0.0, 0.0, w]), np.array([v, 0.0, 0.0])),))
        s = sample_trajectory(scene, 3.0)
        horizontal = s.specific_force_body + s.pose.rotation.m.T @ GRAVITY
        assert np.isclose(np.linalg.norm(horizontal), w * w * (v / w))
        assert np.allclose(s.angular_rate_body, [0, 0, w])

    def test_finite_difference_velocity(self):
        scene = simple_scene(segments=(
            TwistSegment(4.0, np.array([0.1, -0.05, 0.3]), np.array([2.0, 0.5, -0.2])),))
        h = 1e-6
        for t in (0.5, 1.7, 3.2):
            p_plus = sample_trajectory(scene, t + h).pose.translation
            p_minus = sample_trajectory(scene, t - h).pose.translation
            fd = (p_plus - p_minus) / (2 * h)
            assert np.max(np.abs(fd - sample_trajectory(scene, t).velocity_world)) < 1e-6

    def test_out_of_span_rejected(self):
        scene = simple_scene()
        with pytest.raises(ValueError):
            sample_trajectory(scene, -0.5)
        with pytest.raises(ValueError):
            sample_trajectory(scene, 2.5)

    def test_segment_boundary_continuity(self):
        scene = simple_scene(segments=(
            TwistSegment(1.0, np.array([0, 0, 0.2]), np.array([1.0, 0, 0])),
            TwistSegment(1.0, np.array([0, 0, -0.1]), np.array([0.5, 0, 0])),
        ))
        before = sample_trajectory(scene, 1.0 - 1e-9).pose
        after = sample_trajectory(scene, 1.0).pose
        assert np.max(np.abs(before.matrix() - after.matrix())) < 1e-8


class TestRender:
    def test_landmark_on_principal_ray(self):
        scene = simple_scene(landmarks=np.array([[5.0, 0.0, 0.0]]),
                             image_width=640, image_height=240)
        depth, disp = render_frame(scene, 0.0, RIG)
        assert depth.valid[int(K.cy), int(K.cx)]
        assert np.isclose(depth.values[int(K.cy), int(K.cx)], 5.0)

    def test_disparity_depth_inverse(self):
        scene = vehicle_scene(duration=2.0, speed=5.0, landmark_count=500, seed=3)
        depth, disp = render_frame(scene, 0.5, RIG)
        back = disparity_to_depth(disp, RIG)
        assert np.array_equal(back.valid, depth.valid)
        assert np.max(np.abs(back.values[depth.valid] - depth.values[depth.valid])) < 1e-9

    def test_zbuffer_keeps_nearest(self):
        # two landmarks on the same ray; the nearer one must win
        scene = simple_scene(landmarks=np.array([[10.0, 0.0, 0.0], [5.0, 0.0, 0.0]]))
        depth, _ = render_frame(scene, 0.0, RIG)
        assert np.isclose(depth.values[int(K.cy), int(K.cx)], 5.0)

    def test_visible_points_match_render(self):
        scene = vehicle_scene(duration=2.0, speed=5.0, landmark_count=800, seed=4)
        depth, _ = render_frame(scene, 1.0, RIG)
        cloud, idx = visible_points(scene, 1.0, RIG)
        assert len(cloud) == int(depth.valid.sum())
        px = np.rint(cloud.source_pixels).astype(int)
        assert np.allclose(depth.values[px[:, 1], px[:, 0]], cloud.points[:, 2])

    def test_unproject_of_render_matches_exact_at_quantization(self):
        scene = vehicle_scene(duration=2.0, speed=5.0, landmark_count=800, seed=5)
        depth, _ = render_frame(scene, 0.4, RIG)
        grid_cloud = depth_to_pointcloud(depth, K)
        exact, _ = visible_points(scene, 0.4, RIG)
        order = np.lexsort((np.rint(exact.source_pixels[:, 1]),
                            np.rint(exact.source_pixels[:, 0])))
        grid_order = np.lexsort((grid_cloud.source_pixels[:, 1],
                                 grid_cloud.source_pixels[:, 0]))
        a = exact.points[order]
        b = grid_cloud.points[grid_order]
        # same depth, lateral offset at most half a pixel at that depth
        assert np.allclose(a[:, 2], b[:, 2], atol=1e-12)
        max_lateral = np.max(np.abs(a[:, :2] - b[:, :2]))
        assert max_lateral < 0.5 * np.max(a[:, 2]) / K.fx + 1e-9


class TestIcpOnExactClouds:
    def test_recovers_known_motion(self):
        scene = vehicle_scene(duration=2.0, speed=5.0, landmark_count=3000, seed=6)
        t0, t1 = 0.5, 0.6
        c0, c1, _ = exact_correspondences(scene, t0, t1, RIG)
        res = icp(c0, c1)
        assert res.converged
        cam0 = compose(sample_trajectory(scene, t0).pose, RIG.cam_to_imu)
        cam1 = compose(sample_trajectory(scene, t1).pose, RIG.cam_to_imu)
        true_rel = compose(inverse(cam0), cam1)
        assert np.max(np.abs(res.transform.matrix() - true_rel.matrix())) < 1e-6


class TestSynthesizeImu:
    def test_stationary_scene_measures_gravity_reaction(self):
        scene = simple_scene(segments=(
            TwistSegment(1.0, np.zeros(3), np.zeros(3)),))
        samples = synthesize_imu(scene)
        assert len(samples) == 201
        for s in samples[:5]:
            assert np.allclose(s.gyro, 0.0)
            assert np.allclose(s.accel, -GRAVITY)

    def test_same_seed_identical_stream(self):
        noise = ImuNoiseModel(gyro_noise=1e-3, accel_noise=1e-2,
                              gyro_bias_walk=0, accel_bias_walk=0)
        scene = simple_scene(noise=noise, seed=42)
        a = synthesize_imu(scene)
        b = synthesize_imu(scene)
        for sa, sb in zip(a, b):
            assert sa.t_ns == sb.t_ns
            assert np.array_equal(sa.gyro, sb.gyro)
            assert np.array_equal(sa.accel, sb.accel)

    def test_preintegration_matches_ground_truth_per_interval(self):
        # single smooth segment; every 0.1 s camera interval must close
        scene = simple_scene(segments=(
            TwistSegment(1.0, np.array([0.15, -0.1, 0.3]), np.array([2.0, 0.3, -0.1])),))
        samples = synthesize_imu(scene)
        per = int(round(scene.imu_rate / scene.cam_rate))
        for k in range(int(scene.duration * scene.cam_rate)):
            chunk = samples[k * per:(k + 1) * per + 1]
            d = preintegrate(chunk, ImuStatus.zero(), ImuNoiseModel(0, 0, 0, 0))
            t0 = chunk[0].t
            s0 = sample_trajectory(scene, t0)
            s1 = sample_trajectory(scene, chunk[-1].t)
            r0 = s0.pose.rotation.m
            dt = d.dt_total
            gt_dr = r0.T @ s1.pose.rotation.m
            gt_dp = r0.T @ (s1.pose.translation - s0.pose.translation
                            - s0.velocity_world * dt - 0.5 * GRAVITY * dt * dt)
            rot_err = Rotation(d.delta_r.m.T @ gt_dr).angle()
            assert rot_err < 1e-5
            assert np.max(np.abs(d.delta_p - gt_dp)) < 1e-4

    def test_matches_rk4_oracle_over_one_second(self):
        scene = simple_scene(segments=(
            TwistSegment(1.0, np.array([0.4, -0.25, 0.5]), np.array([3.0, 0.5, -0.3])),))
        samples = synthesize_imu(scene)
        d = preintegrate(samples, ImuStatus.zero(), ImuNoiseModel(0, 0, 0, 0))
        r_ref, v_ref, p_ref = rk4_reference_delta(scene, 0.0, 1.0, 2000.0)
        assert Rotation(d.delta_r.m.T @ r_ref.m).angle() < 1e-5
        assert np.max(np.abs(d.delta_p - p_ref)) < 1e-4
        assert np.max(np.abs(d.delta_v - v_ref)) < 1e-4


class TestGroundTruth:
    def test_camera_frame_composition(self):
        scene = simple_scene()
        body = ground_truth_trajectory(scene)
        cam = ground_truth_trajectory(scene, rig=RIG, frame="camera")
        for pb, pc in zip(body.poses, cam.poses):
            expected = compose(pb, RIG.cam_to_imu)
            assert np.max(np.abs(pc.matrix() - expected.matrix())) < 1e-12

    def test_dynamic_landmarks_translate(self):
        scene = simple_scene(
            landmarks=np.array([[10.0, 0, 0], [20.0, 0, 0]]),
        )
        scene = SyntheticScene(
            landmarks=scene.landmarks, segments=scene.segments,
            dynamic_mask=np.array([True, False]),
            dynamic_velocity=np.array([0.0, 1.0, 0.0]),
        )
        pts = landmark_positions(scene, 2.0)
        assert np.allclose(pts[0], [10.0, 2.0, 0.0])
        assert np.allclose(pts[1], [20.0, 0.0, 0.0])
