"""Run configuration: a flat key=value file with dotted key paths.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are
rejected (fail closed) and type errors report the key path. Every value
has an explicit default, and ``dump`` echoes the complete effective
configuration in canonical form, so an empty file is a valid run config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from viogeom.bias_update import StatusUpdateParams
from viogeom.degrade import DegradationSpec
from viogeom.errors import ConfigError
from viogeom.evaluate import LossConfig
from viogeom.icp import IcpParams
from viogeom.imu import ImuNoiseModel
from viogeom.se3 import RigidTransform
from viogeom.stereo import CameraIntrinsics, StereoRig


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text, n):
    vals = [float(tok) for tok in text.replace(",", " ").split()]
    if len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _parse_seq_map(text):
    """'00:path/a, 01:path/b' -> {'00': 'path/a', '01': 'path/b'}"""
    out = {}
    text = text.strip()
    if not text:
        return out
    for item in text.split(","):
        if ":" not in item:
            raise ValueError(f"mapping entry without ':': {item!r}")
        seq, path = item.split(":", 1)
        out[seq.strip()] = path.strip()
    return out


def _fmt_float(v):
    return repr(float(v))


def _fmt_bool(v):
    return "true" if v else "false"


def _fmt_floats(vals):
    return " ".join(_fmt_float(v) for v in vals)


def _fmt_seq_map(m):
    return ", ".join(f"{k}:{v}" for k, v in sorted(m.items()))


# key -> (parse, format, default, help)
_SCHEMA = {
    "rig.fx": (float, _fmt_float, 500.0, "left focal length, px"),
    "rig.fy": (float, _fmt_float, 500.0, "left focal length, px"),
    "rig.cx": (float, _fmt_float, 320.0, "principal point x, px"),
    "rig.cy": (float, _fmt_float, 120.0, "principal point y, px"),
    "rig.baseline": (float, _fmt_float, 0.5, "stereo baseline, m"),
    "rig.width": (int, "%d", 640, "image width, px"),
    "rig.height": (int, "%d", 240, "image height, px"),
    "rig.cam_to_imu": (lambda s: _parse_floats(s, 12), _fmt_floats,
                       [1.0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0, 1.0, 0],
                       "row-major 3x4 [R|t], camera->IMU"),
    "depth.near": (float, _fmt_float, 1.0, "near depth band edge, m"),
    "depth.far": (float, _fmt_float, 80.0, "far depth band edge, m"),
    "icp.max_iterations": (int, "%d", 50, ""),
    "icp.convergence_tol": (float, _fmt_float, 1e-8, "step-norm tolerance"),
    "icp.max_pair_distance": (float, _fmt_float, 1.0, "m"),
    "icp.trim_fraction": (float, _fmt_float, 0.2, ""),
    "icp.residual_reject_sigma": (float, _fmt_float, 3.0, ""),
    "icp.min_reject_distance": (float, _fmt_float, 1e-4, "m"),
    "icp.voxel_size": (float, _fmt_float, 0.1, "m"),
    "flow.mode": (str, "%s", "endpoint", "endpoint | paper"),
    "flow.fill_radius": (float, _fmt_float, 3.0, "px"),
    "imu.gyro_noise": (float, _fmt_float, 1.7e-4, "rad/s/sqrt(Hz)"),
    "imu.accel_noise": (float, _fmt_float, 2.0e-3, "m/s^2/sqrt(Hz)"),
    "imu.gyro_bias_walk": (float, _fmt_float, 1.9e-5, ""),
    "imu.accel_bias_walk": (float, _fmt_float, 3.0e-3, ""),
    "imu.gravity": (lambda s: _parse_floats(s, 3), _fmt_floats,
                    [0.0, 0.0, -9.81], "world-frame gravity, m/s^2"),
    "update.huber_delta": (float, _fmt_float, 1.345, ""),
    "update.max_iterations": (int, "%d", 30, ""),
    "update.step_tol": (float, _fmt_float, 1e-10, ""),
    "update.damping_init": (float, _fmt_float, 1e-8, ""),
    "update.trust_region": (float, _fmt_float, 0.1, ""),
    "update.window_intervals": (int, "%d", 5, "intervals per bias window"),
    "loss.beta": (float, _fmt_float, 1.0, ""),
    "loss.beta_prime": (float, _fmt_float, 1.0, ""),
    "eval.lengths": (lambda s: _parse_floats(s, len(s.replace(",", " ").split())),
                     _fmt_floats,
                     [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0],
                     "window lengths, m"),
    "eval.stride": (int, "%d", 10, "window start stride, frames"),
    "degrade.miscal_deg": (float, _fmt_float, 0.0, "extrinsic rotation error, deg"),
    "degrade.desync_ms": (float, _fmt_float, 0.0, "IMU timestamp offset, ms"),
    "degrade.desync_jitter": (_parse_bool, _fmt_bool, False,
                              "per-sample jitter instead of constant offset"),
    "degrade.imu_drop_rate": (float, _fmt_float, 0.0, ""),
    "degrade.cam_drop_rate": (float, _fmt_float, 0.0, ""),
    "degrade.seed": (int, "%d", 0, ""),
    "synth.duration": (float, _fmt_float, 60.0, "s"),
    "synth.landmarks": (int, "%d", 12000, ""),
    "synth.dynamic_landmarks": (int, "%d", 0, ""),
    "synth.dynamic_speed": (float, _fmt_float, 2.0, "m/s"),
    "synth.speed": (float, _fmt_float, 12.0, "m/s"),
    "synth.imu_rate": (float, _fmt_float, 200.0, "Hz"),
    "synth.cam_rate": (float, _fmt_float, 10.0, "Hz"),
    "synth.noise": (_parse_bool, _fmt_bool, False, "add IMU measurement noise"),
    "synth.bias_bg": (lambda s: _parse_floats(s, 3), _fmt_floats,
                      [0.0, 0.0, 0.0], "true gyro bias, rad/s"),
    "synth.bias_ba": (lambda s: _parse_floats(s, 3), _fmt_floats,
                      [0.0, 0.0, 0.0], "true accel bias, m/s^2"),
    "supervise.max_failure_fraction": (float, _fmt_float, 0.0,
                                       "tolerated fraction of failed pairs"),
    "kitti.disparity_dir": (str, "%s", "disp_2", ""),
    "kitti.oxts_map": (_parse_seq_map, _fmt_seq_map, {},
                       "sequence:raw-drive-path entries"),
    "seed": (int, "%d", 0, "master seed"),
}


@dataclass
class RunConfig:
    """Effective configuration with every key resolved."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: spec[2] for k, spec in _SCHEMA.items()}
        full.update(self.values)
        self.values = full

    def __getitem__(self, key):
        return self.values[key]

    def rig(self) -> StereoRig:
        v = self.values
        return StereoRig(
            intrinsics=CameraIntrinsics(fx=v["rig.fx"], fy=v["rig.fy"],
                                        cx=v["rig.cx"], cy=v["rig.cy"]),
            baseline=v["rig.baseline"],
            cam_to_imu=RigidTransform.from_matrix(
                np.asarray(v["rig.cam_to_imu"]).reshape(3, 4), projected=True),
        )

    def depth_band(self):
        return self.values["depth.near"], self.values["depth.far"]

    def icp_params(self) -> IcpParams:
        v = self.values
        return IcpParams(
            max_iterations=v["icp.max_iterations"],
            convergence_tol=v["icp.convergence_tol"],
            max_pair_distance=v["icp.max_pair_distance"],
            trim_fraction=v["icp.trim_fraction"],
            residual_reject_sigma=v["icp.residual_reject_sigma"],
            min_reject_distance=v["icp.min_reject_distance"],
            voxel_size=v["icp.voxel_size"],
        )

    def noise_model(self) -> ImuNoiseModel:
        v = self.values
        return ImuNoiseModel(
            gyro_noise=v["imu.gyro_noise"],
            accel_noise=v["imu.accel_noise"],
            gyro_bias_walk=v["imu.gyro_bias_walk"],
            accel_bias_walk=v["imu.accel_bias_walk"],
        )

    def gravity(self):
        return np.asarray(self.values["imu.gravity"], dtype=float)

    def update_params(self) -> StatusUpdateParams:
        v = self.values
        return StatusUpdateParams(
            huber_delta=v["update.huber_delta"],
            max_iterations=v["update.max_iterations"],
            step_tol=v["update.step_tol"],
            damping_init=v["update.damping_init"],
            trust_region=v["update.trust_region"],
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(beta=self.values["loss.beta"],
                          beta_prime=self.values["loss.beta_prime"])

    def degradation(self) -> DegradationSpec:
        v = self.values
        return DegradationSpec(
            miscal_deg=v["degrade.miscal_deg"],
            desync_ms=v["degrade.desync_ms"],
            desync_jitter=v["degrade.desync_jitter"],
            imu_drop_rate=v["degrade.imu_drop_rate"],
            cam_drop_rate=v["degrade.cam_drop_rate"],
            seed=v["degrade.seed"],
        )

    def validate(self):
        near, far = self.depth_band()
        if not 0 <= near < far:
            raise ConfigError(f"depth.near/depth.far: invalid band ({near}, {far})")
        self.rig()
        self.icp_params()
        self.noise_model()
        self.update_params()
        self.loss_config()
        self.degradation()
        if self.values["flow.mode"] not in ("endpoint", "paper"):
            raise ConfigError(f"flow.mode: must be endpoint or paper, "
                              f"got {self.values['flow.mode']!r}")
        if self.values["eval.stride"] < 1:
            raise ConfigError("eval.stride: must be >= 1")
        return self


def loads(text, path="<string>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, text_value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parse = _SCHEMA[key][0]
        try:
            values[key] = parse(text_value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}")
    try:
        return RunConfig(values).validate()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    with open(path) as f:
        return loads(f.read(), path=str(path))


def dump(config: RunConfig) -> str:
    """Canonical echo of the full effective configuration."""
    lines = []
    for key in sorted(_SCHEMA):
        fmt = _SCHEMA[key][1]
        value = config.values[key]
        rendered = fmt(value) if callable(fmt) else fmt % value
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def save_run_config(path, config: RunConfig):
    with open(path, "w") as f:
        f.write(dump(config))
