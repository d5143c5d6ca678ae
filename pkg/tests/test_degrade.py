import numpy as np
import pytest

from viogeom.degrade import (
    DegradationSpec,
    apply_degradation,
    desync,
    drop_frames,
    drop_imu,
    miscalibrate,
)
from viogeom.imu import ImuSample
from viogeom.io.manifest import SequenceManifest
from viogeom.se3 import RigidTransform, Rotation, so3_log
from viogeom.stereo import CameraIntrinsics, StereoRig

RIG = StereoRig(CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=120.0), baseline=0.5)


def make_stream(n=100, dt_ns=5_000_000):
    rng = np.random.default_rng(90)
    return [
        ImuSample(t_ns=i * dt_ns, gyro=rng.normal(size=3), accel=rng.normal(size=3))
        for i in range(n)
    ]


def make_manifest(n=20):
    return SequenceManifest(
        frame_t_ns=[i * 100_000_000 for i in range(n)],
        left_image_paths=[f"l{i}.png" for i in range(n)],
        right_image_paths=[f"r{i}.png" for i in range(n)],
        disparity_paths=[f"d{i}.png" for i in range(n)],
        rig=RIG,
    )


class TestSpec:
    def test_rates_validated(self):
        with pytest.raises(ValueError):
            DegradationSpec(imu_drop_rate=1.5, seed=1)
        with pytest.raises(ValueError):
            DegradationSpec(cam_drop_rate=-0.1, seed=1)

    def test_seed_mandatory_for_random_conditions(self):
        with pytest.raises(ValueError):
            DegradationSpec(imu_drop_rate=0.5)
        with pytest.raises(ValueError):
            DegradationSpec(miscal_deg=10.0)
        DegradationSpec(desync_ms=20.0)  # constant offset needs no seed


class TestMiscalibrate:
    def test_zero_angle_identity(self):
        assert miscalibrate(RIG, 0.0, seed=1) is RIG

    def test_exact_angular_distance(self):
        out = miscalibrate(RIG, 10.0, seed=7)
        rel = RIG.cam_to_imu.rotation.m.T @ out.cam_to_imu.rotation.m
        angle = np.linalg.norm(so3_log(Rotation(rel)))
        assert abs(angle - np.deg2rad(10.0)) < 1e-9
        assert np.array_equal(out.cam_to_imu.translation, RIG.cam_to_imu.translation)
        assert out.baseline == RIG.baseline

    def test_same_seed_same_axis(self):
        a = miscalibrate(RIG, 10.0, seed=3)
        b = miscalibrate(RIG, 10.0, seed=3)
        assert np.array_equal(a.cam_to_imu.rotation.m, b.cam_to_imu.rotation.m)
        c = miscalibrate(RIG, 10.0, seed=4)
        assert not np.allclose(a.cam_to_imu.rotation.m, c.cam_to_imu.rotation.m)


class TestDesync:
    def test_zero_offset_identity(self):
        stream = make_stream(10)
        out = desync(stream, 0.0)
        assert [s.t_ns for s in out] == [s.t_ns for s in stream]

    def test_constant_twenty_ms_exact(self):
        stream = make_stream(10)
        out = desync(stream, 20.0)
        for a, b in zip(stream, out):
            assert b.t_ns - a.t_ns == 20_000_000
            assert np.array_equal(a.gyro, b.gyro)

    def test_jitter_replay_deterministic(self):
        stream = make_stream(200)
        a = desync(stream, 20.0, jitter=True, seed=11)
        b = desync(stream, 20.0, jitter=True, seed=11)
        assert [s.t_ns for s in a] == [s.t_ns for s in b]
        assert all(np.array_equal(x.gyro, y.gyro) for x, y in zip(a, b))
        ts = np.array([s.t_ns for s in a])
        assert np.all(np.diff(ts) >= 0)

    def test_jitter_requires_seed(self):
        with pytest.raises(ValueError):
            desync(make_stream(5), 20.0, jitter=True)


class TestDrops:
    def test_rate_zero_identity(self):
        stream = make_stream(50)
        assert drop_imu(stream, 0.0, seed=1) == stream

    def test_rate_one_empties_stream(self):
        assert drop_imu(make_stream(50), 1.0, seed=1) == []

    def test_seeded_survivor_count_frozen(self):
        # golden count for (n=1000, rate=0.9, seed=123); guards generator
        # and keying changes
        stream = make_stream(1000)
        out = drop_imu(stream, 0.9, seed=123)
        assert len(out) == 99
        again = drop_imu(stream, 0.9, seed=123)
        assert [s.t_ns for s in again] == [s.t_ns for s in out]

    def test_order_preserved(self):
        out = drop_imu(make_stream(500), 0.5, seed=5)
        ts = np.array([s.t_ns for s in out])
        assert np.all(np.diff(ts) > 0)

    def test_frame_drop_keeps_endpoints(self):
        m = make_manifest(20)
        out = drop_frames(m, 0.8, seed=9)
        assert out.frame_t_ns[0] == m.frame_t_ns[0]
        assert out.frame_t_ns[-1] == m.frame_t_ns[-1]
        assert len(out) < len(m)
        # all per-frame lists filtered consistently
        for t, l in zip(out.frame_t_ns, out.left_image_paths):
            i = m.frame_t_ns.index(t)
            assert m.left_image_paths[i] == l

    def test_frame_drop_replay(self):
        m = make_manifest(50)
        a = drop_frames(m, 0.5, seed=2)
        b = drop_frames(m, 0.5, seed=2)
        assert a.frame_t_ns == b.frame_t_ns


class TestApplyAll:
    def test_composition_order_and_fields(self):
        m = make_manifest(30)
        stream = make_stream(300)
        spec = DegradationSpec(miscal_deg=10.0, desync_ms=20.0,
                               imu_drop_rate=0.5, cam_drop_rate=0.3, seed=77)
        m2, s2 = apply_degradation(m, stream, spec)
        rel = m.rig.cam_to_imu.rotation.m.T @ m2.rig.cam_to_imu.rotation.m
        assert abs(Rotation(rel).angle() - np.deg2rad(10.0)) < 1e-9
        assert len(s2) < len(stream)
        assert len(m2) < len(m)
        # surviving samples carry the constant offset
        orig_by_payload = {tuple(s.gyro): s.t_ns for s in stream}
        for s in s2[:10]:
            assert s.t_ns - orig_by_payload[tuple(s.gyro)] == 20_000_000

    def test_disabled_spec_is_identity(self):
        m = make_manifest(5)
        stream = make_stream(5)
        spec = DegradationSpec()
        m2, s2 = apply_degradation(m, stream, spec)
        assert m2 is m
        assert [s.t_ns for s in s2] == [s.t_ns for s in stream]
