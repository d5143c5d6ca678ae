import numpy as np
import pytest

from viogeom.errors import ParseError
from viogeom.evaluate import Trajectory
from viogeom.imu import ImuSample
from viogeom.io.euroc import (
    parse_euroc,
    read_groundtruth_csv,
    read_imu_csv,
    write_camera_csv,
    write_groundtruth_csv,
    write_imu_csv,
)
from viogeom.io.kitti import (
    OXTS_ACCEL_OFFSET,
    OXTS_FIELD_COUNT,
    OXTS_GYRO_OFFSET,
    parse_kitti_odometry,
    parse_kitti_oxts,
    write_kitti_calib,
    write_kitti_oxts,
    write_kitti_poses,
    write_kitti_times,
)
from viogeom.io.trajectory import (
    read_pose_rows,
    read_tangents,
    read_trajectory,
    write_pose_rows,
    write_tangents,
    write_trajectory,
)
from viogeom.se3 import RigidTransform, Rotation, Se3Tangent, so3_exp
from viogeom.stereo import CameraIntrinsics, StereoRig

RIG = StereoRig(CameraIntrinsics(fx=718.856, fy=718.856, cx=607.1928, cy=185.2157),
                baseline=0.537)


def make_kitti_tree(root, n_frames=10, with_poses=True, baseline=0.537):
    seq = root / "sequences" / "00"
    (seq / "image_2").mkdir(parents=True)
    (seq / "image_3").mkdir(parents=True)
    write_kitti_times(seq / "times.txt", [round(i * 0.1 * 1e9) for i in range(n_frames)])
    rig = StereoRig(RIG.intrinsics, baseline)
    write_kitti_calib(seq / "calib.txt", rig)
    if with_poses:
        poses = tuple(
            RigidTransform(Rotation.identity(), np.array([i * 1.0, 0.0, 0.0]))
            for i in range(n_frames)
        )
        traj = Trajectory(np.arange(n_frames) * 0.1, poses)
        (root / "poses").mkdir(exist_ok=True)
        write_kitti_poses(root / "poses" / "00.txt", traj)
    return root


class TestKittiOdometry:
    def test_parse_minimal_tree(self, tmp_path):
        make_kitti_tree(tmp_path)
        m = parse_kitti_odometry(tmp_path, "00")
        assert len(m) == 10
        assert np.isclose(m.rig.intrinsics.fx, 718.856)
        assert np.isclose(m.rig.baseline, 0.537)
        assert m.ground_truth is not None
        assert len(m.ground_truth) == 10

    def test_identity_pose_row(self, tmp_path):
        make_kitti_tree(tmp_path, n_frames=1)
        (tmp_path / "poses" / "00.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        m = parse_kitti_odometry(tmp_path, "00")
        assert np.allclose(m.ground_truth.poses[0].matrix(), np.eye(4))

    def test_baseline_recovered_from_p_rows(self, tmp_path):
        make_kitti_tree(tmp_path, baseline=0.7321)
        m = parse_kitti_odometry(tmp_path, "00")
        assert np.isclose(m.rig.baseline, 0.7321)

    def test_round_trip_times_exact(self, tmp_path):
        make_kitti_tree(tmp_path)
        m = parse_kitti_odometry(tmp_path, "00")
        assert m.frame_t_ns == [round(i * 0.1 * 1e9) for i in range(10)]

    def test_missing_calib_is_parse_error(self, tmp_path):
        make_kitti_tree(tmp_path)
        (tmp_path / "sequences" / "00" / "calib.txt").unlink()
        with pytest.raises(ParseError):
            parse_kitti_odometry(tmp_path, "00")

    def test_malformed_calib_reports_file(self, tmp_path):
        make_kitti_tree(tmp_path)
        (tmp_path / "sequences" / "00" / "calib.txt").write_text("P2: 1 2 three\n")
        with pytest.raises(ParseError) as err:
            parse_kitti_odometry(tmp_path, "00")
        assert "calib.txt" in str(err.value)

    def test_pose_count_mismatch(self, tmp_path):
        make_kitti_tree(tmp_path)
        lines = (tmp_path / "poses" / "00.txt").read_text().splitlines()
        (tmp_path / "poses" / "00.txt").write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(ParseError):
            parse_kitti_odometry(tmp_path, "00")


class TestKittiOxts:
    def test_field_offsets_against_devkit_fixture(self, tmp_path):
        # raw-devkit dataformat order: lat lon alt roll pitch yaw vn ve vf
        # vl vu ax ay az af al au wx wy wz wf wl wu ... (30 fields)
        (tmp_path / "oxts" / "data").mkdir(parents=True)
        fields = [0.0] * OXTS_FIELD_COUNT
        fields[0:6] = [49.01, 8.43, 112.83, 0.02, -0.01, 0.5]
        fields[11:14] = [0.27, -0.13, 9.81]  # ax ay az
        fields[17:20] = [0.011, -0.022, 0.033]  # wx wy wz
        (tmp_path / "oxts" / "data" / "0000000000.txt").write_text(
            " ".join(str(v) for v in fields) + "\n")
        (tmp_path / "oxts" / "timestamps.txt").write_text(
            "2011-09-26 13:02:25.964389445\n")
        samples = parse_kitti_oxts(tmp_path)
        assert len(samples) == 1
        assert np.allclose(samples[0].accel, [0.27, -0.13, 9.81])
        assert np.allclose(samples[0].gyro, [0.011, -0.022, 0.033])
        assert samples[0].t_ns % 1_000_000_000 == 964389445

    def test_all_zero_line(self, tmp_path):
        (tmp_path / "oxts" / "data").mkdir(parents=True)
        (tmp_path / "oxts" / "data" / "0000000000.txt").write_text(
            " ".join(["0"] * OXTS_FIELD_COUNT) + "\n")
        (tmp_path / "oxts" / "timestamps.txt").write_text("2011-09-26 13:00:00.0\n")
        samples = parse_kitti_oxts(tmp_path)
        assert np.allclose(samples[0].gyro, 0.0)
        assert np.allclose(samples[0].accel, 0.0)

    def test_wrong_field_count_rejected(self, tmp_path):
        (tmp_path / "oxts" / "data").mkdir(parents=True)
        (tmp_path / "oxts" / "data" / "0000000000.txt").write_text("1 2 3\n")
        (tmp_path / "oxts" / "timestamps.txt").write_text("2011-09-26 13:00:00.0\n")
        with pytest.raises(ParseError):
            parse_kitti_oxts(tmp_path)

    def test_write_parse_round_trip(self, tmp_path):
        rng = np.random.default_rng(80)
        samples = [
            ImuSample(t_ns=int(5e6) * i, gyro=rng.normal(size=3), accel=rng.normal(size=3))
            for i in range(50)
        ]
        write_kitti_oxts(tmp_path, samples)
        back = parse_kitti_oxts(tmp_path)
        assert len(back) == 50
        for a, b in zip(samples, back):
            assert a.t_ns == b.t_ns
            assert np.array_equal(a.gyro, b.gyro)
            assert np.array_equal(a.accel, b.accel)

    def test_non_monotone_timestamps_rejected(self, tmp_path):
        (tmp_path / "oxts" / "data").mkdir(parents=True)
        for i in range(2):
            (tmp_path / "oxts" / "data" / f"{i:010d}.txt").write_text(
                " ".join(["0"] * OXTS_FIELD_COUNT) + "\n")
        (tmp_path / "oxts" / "timestamps.txt").write_text(
            "2011-09-26 13:00:01.0\n2011-09-26 13:00:00.5\n")
        with pytest.raises(ParseError):
            parse_kitti_oxts(tmp_path)


class TestEuroc:
    def test_documented_row_mapping(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n"
                     "1403636579758555392,0.1,0,0,0,0,9.81\n")
        samples = read_imu_csv(p)
        assert samples[0].t_ns == 1403636579758555392
        assert np.allclose(samples[0].gyro, [0.1, 0, 0])
        assert np.allclose(samples[0].accel, [0, 0, 9.81])

    def test_empty_data_rows_give_empty_stream(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n")
        assert read_imu_csv(p) == []

    def test_non_numeric_field_reports_row(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("#hdr\n1,0,0,0,0,0,9.81\n2,0,zero,0,0,0,9.81\n")
        with pytest.raises(ParseError) as err:
            read_imu_csv(p)
        assert ":3" in str(err.value)

    def test_wrong_field_count_rejected(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("1,2,3\n")
        with pytest.raises(ParseError):
            read_imu_csv(p)

    def test_full_tree_round_trip(self, tmp_path):
        rng = np.random.default_rng(81)
        mav = tmp_path / "mav0"
        (mav / "imu0").mkdir(parents=True)
        (mav / "cam0").mkdir(parents=True)
        (mav / "state_groundtruth_estimate0").mkdir(parents=True)
        samples = [
            ImuSample(t_ns=1403636579758555392 + i * 5_000_000,
                      gyro=rng.normal(size=3), accel=rng.normal(size=3))
            for i in range(100)
        ]
        write_imu_csv(mav / "imu0" / "data.csv", samples)
        frames = [(1403636579758555392 + i * 50_000_000, f"{i}.png") for i in range(10)]
        write_camera_csv(mav / "cam0" / "data.csv", frames)
        poses = tuple(
            RigidTransform(so3_exp(rng.normal(0, 0.4, 3)), rng.uniform(-3, 3, 3))
            for _ in range(10)
        )
        traj = Trajectory(np.array([t for t, _ in frames]) / 1e9, poses)
        vels = rng.normal(size=(10, 3))
        write_groundtruth_csv(mav / "state_groundtruth_estimate0" / "data.csv", traj, vels)

        manifest, stream = parse_euroc(tmp_path, RIG)
        assert len(stream) == 100
        for a, b in zip(samples, stream):
            assert a.t_ns == b.t_ns
            assert np.array_equal(a.gyro, b.gyro)
            assert np.array_equal(a.accel, b.accel)
        assert len(manifest) == 10
        gt = manifest.ground_truth
        for got, want in zip(gt.poses, poses):
            assert np.max(np.abs(got.matrix() - want.matrix())) < 1e-12
        _, vels_back = read_groundtruth_csv(
            mav / "state_groundtruth_estimate0" / "data.csv")
        assert np.array_equal(vels_back, vels)


class TestTrajectoryFiles:
    def test_pose_rows_round_trip(self, tmp_path):
        rng = np.random.default_rng(82)
        poses = [
            RigidTransform(so3_exp(rng.normal(0, 0.8, 3)), rng.uniform(-10, 10, 3))
            for _ in range(25)
        ]
        write_pose_rows(tmp_path / "p.txt", poses)
        back = read_pose_rows(tmp_path / "p.txt")
        for a, b in zip(poses, back):
            assert np.max(np.abs(a.matrix() - b.matrix())) < 1e-12

    def test_timestamped_round_trip(self, tmp_path):
        rng = np.random.default_rng(83)
        poses = tuple(
            RigidTransform(so3_exp(rng.normal(0, 0.5, 3)), rng.uniform(-5, 5, 3))
            for _ in range(12)
        )
        traj = Trajectory(np.arange(12) * 0.1 + 100.0, poses)
        write_trajectory(tmp_path / "t.txt", traj)
        back = read_trajectory(tmp_path / "t.txt")
        assert np.array_equal(back.times, traj.times)

    def test_bad_column_count(self, tmp_path):
        (tmp_path / "p.txt").write_text("1 2 3\n")
        with pytest.raises(ParseError):
            read_pose_rows(tmp_path / "p.txt")

    def test_tangent_rows_with_information(self, tmp_path):
        rng = np.random.default_rng(84)
        rows = []
        for i in range(5):
            xi = Se3Tangent(rng.normal(size=3) * 0.1, rng.normal(size=3))
            info = rng.normal(size=(6, 6))
            rows.append((i * 100_000_000, xi, info))
        write_tangents(tmp_path / "x.txt", rows)
        back = read_tangents(tmp_path / "x.txt")
        for (t0, xi0, m0), (t1, xi1, m1) in zip(rows, back):
            assert t0 == t1
            assert np.array_equal(xi0.vector(), xi1.vector())
            assert np.array_equal(m0, m1)

    def test_tangent_rows_without_information(self, tmp_path):
        write_tangents(tmp_path / "x.txt", [(5, Se3Tangent.zero())])
        rows = read_tangents(tmp_path / "x.txt")
        assert rows[0][0] == 5
        assert rows[0][2] is None
