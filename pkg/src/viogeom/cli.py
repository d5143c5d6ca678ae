"""Command-line front door wiring the pipeline end to end.

Subcommands are thin, deterministic compositions of the library modules:
``synth`` emits a synthetic dataset, ``supervise`` generates flow/pose
supervision labels from disparity sequences, ``preintegrate`` integrates
the IMU per camera interval, ``update-bias`` runs the pose-feedback bias
estimator, ``degrade`` applies the robustness conditions, ``eval``
compares trajectories and ``flow-compare`` reports endpoint error between
two flow files.

Every numeric default lives in the run configuration (``--config``); each
command echoes the effective configuration next to its outputs and prints
a machine-readable ``key=value`` summary. All randomness is seeded through
the configuration, so reruns with identical inputs are byte-identical,
independent of ``--workers``. Exit codes: 0 success, 1 usage error,
2 parse/config error, 3 numeric failure beyond threshold.

Environment overrides for flag defaults: VIOGEOM_CONFIG, VIOGEOM_SEED,
VIOGEOM_WORKERS.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from viogeom import errors
from viogeom.bias_update import update_status_windows
from viogeom.degrade import apply_degradation
from viogeom.evaluate import (
    Trajectory,
    ate_rmse,
    integrate_se3_chain,
    kitti_relative_errors,
)
from viogeom.flow import compute_3d_flow, epe, project_flow, synthesize_dense_2d_flow
from viogeom.icp import icp, stereo_se3
from viogeom.imu import ImuStatus, delta_space_reference, preintegrate
from viogeom.io import euroc as euroc_io
from viogeom.io import kitti as kitti_io
from viogeom.io.formats import (
    load_flow_field,
    read_disparity_png16,
    save_flow_field,
    write_flow_ply,
)
from viogeom.io.runconfig import RunConfig, dump, load_run_config, save_run_config
from viogeom.io.trajectory import (
    read_pose_rows,
    read_tangents,
    read_trajectory,
    write_tangents,
    write_trajectory,
)
from viogeom.se3 import (
    RigidTransform,
    Se3Tangent,
    compose,
    inverse,
    se3_exp,
    se3_log,
)
from viogeom.stereo import depth_band_filter, depth_to_pointcloud, disparity_to_depth
from viogeom.synth import emit_dataset, vehicle_scene
from viogeom.imu import ImuNoiseModel

NS_PER_S = 1_000_000_000

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig({})
    if getattr(args, "seed", None) is not None:
        cfg.values["seed"] = args.seed
        cfg.values["degrade.seed"] = args.seed
    return cfg


def _echo_config(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(out_dir / "run_config.echo", cfg)


def _write_summary(out_dir, rows):
    lines = [f"{k}={v}" for k, v in rows]
    (Path(out_dir) / "summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)


def _parse_dataset(args, cfg):
    """Manifest + IMU stream for either supported layout."""
    root = Path(args.dataset)
    if args.layout == "kitti":
        manifest = kitti_io.parse_kitti_odometry(
            root, args.sequence, cam_to_imu=cfg.rig().cam_to_imu,
            disparity_dir=cfg["kitti.disparity_dir"])
        samples = None
        if (root / "oxts").is_dir():
            samples = kitti_io.parse_kitti_oxts(root)
        return manifest, samples
    if args.layout == "euroc":
        return euroc_io.parse_euroc(root, cfg.rig())
    raise _UsageError(f"unknown layout {args.layout!r}")


def _load_any_trajectory(path):
    """Timestamped rows (13 cols) or plain pose rows (12 cols, index time)."""
    with open(path) as f:
        first = f.readline().split()
    if len(first) == 13:
        return read_trajectory(path)
    poses = read_pose_rows(path)
    return Trajectory(np.arange(len(poses), dtype=float), tuple(poses))


# --------------------------------------------------------------------------
# supervise
# --------------------------------------------------------------------------

def _supervise_pair(pair_index, manifest, cfg, out_dir):
    """Labels for one consecutive frame pair; returns summary fields."""
    rig = manifest.rig
    near, far = cfg.depth_band()
    params = cfg.icp_params()

    clouds = []
    for frame in (pair_index, pair_index + 1):
        disp_path = manifest.disparity_paths[frame]
        if disp_path is None or not Path(disp_path).is_file():
            raise errors.ParseError("missing disparity file", path=str(disp_path))
        disp = read_disparity_png16(disp_path)
        depth = depth_band_filter(disparity_to_depth(disp, rig), near, far)
        clouds.append((depth, depth_to_pointcloud(depth, rig.intrinsics)))
    (depth_prev, prev), (_, cur) = clouds

    result = icp(prev, cur, params)
    tangent = stereo_se3(result)

    field3d = compute_3d_flow(prev, cur, result.correspondences)
    sparse = project_flow(field3d, depth_prev, rig, view="left",
                          mode=cfg["flow.mode"])
    dynamic_pixels = prev.source_pixels[result.rejected.prev_indices] \
        if len(result.rejected) else None
    dense = synthesize_dense_2d_flow(sparse, prev, dynamic_pixels=dynamic_pixels,
                                     fill_radius=cfg["flow.fill_radius"])

    save_flow_field(dense,
                    out_dir / "flow" / f"{pair_index:06d}.flo",
                    out_dir / "flow" / f"{pair_index:06d}.mask.png")
    write_flow_ply(out_dir / "flow3d" / f"{pair_index:06d}.ply",
                   field3d.anchors, field3d.vectors, field3d.source_pixels)
    return {
        "tangent": tangent,
        "mean_residual": result.mean_residual,
        "matches": len(result.correspondences),
        "rejected": len(result.rejected),
        "iterations": result.iterations,
    }


def cmd_supervise(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    (out_dir / "flow").mkdir(parents=True, exist_ok=True)
    (out_dir / "flow3d").mkdir(exist_ok=True)
    _echo_config(cfg, out_dir)

    manifest, _ = _parse_dataset(args, cfg)
    n_pairs = max(len(manifest) - 1, 0)
    results = [None] * n_pairs
    failures = []

    def work(k):
        try:
            return k, _supervise_pair(k, manifest, cfg, out_dir), None
        except errors.ViogeomError as exc:
            return k, None, exc

    if args.workers > 1 and n_pairs:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            outcomes = list(pool.map(work, range(n_pairs)))
    else:
        outcomes = [work(k) for k in range(n_pairs)]

    for k, row, exc in outcomes:
        if exc is not None:
            failures.append((k, exc))
            print(f"pair {k}: FAILED: {exc}", file=sys.stderr)
        else:
            results[k] = row

    rel = [
        (manifest.frame_t_ns[k + 1], results[k]["tangent"])
        for k in range(n_pairs) if results[k] is not None
    ]
    write_tangents(out_dir / "stereo_se3.txt",
                   [(t, xi) for t, xi in rel])
    if all(r is not None for r in results):
        traj = integrate_se3_chain(
            [(t / NS_PER_S, xi) for t, xi in rel],
            RigidTransform.identity(),
            origin_time=manifest.frame_t_ns[0] / NS_PER_S)
        write_trajectory(out_dir / "trajectory.txt", traj)

    ok = [r for r in results if r is not None]
    rows = [
        ("pairs", n_pairs),
        ("pairs_ok", len(ok)),
        ("pairs_failed", len(failures)),
        ("mean_icp_residual", repr(float(np.mean([r["mean_residual"] for r in ok]))
                                   if ok else 0.0)),
        ("rejected_total", sum(r["rejected"] for r in ok)),
    ]
    _write_summary(out_dir, rows)

    failure_fraction = len(failures) / n_pairs if n_pairs else 0.0
    if failure_fraction > cfg["supervise.max_failure_fraction"]:
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------
# preintegrate / update-bias helpers
# --------------------------------------------------------------------------

def _body_ground_truth(manifest, layout, rig):
    """World-from-body ground truth (KITTI gt rows are camera poses)."""
    gt = manifest.ground_truth
    if gt is None:
        raise errors.ParseError("dataset carries no ground truth trajectory",
                                path="<ground truth>")
    if layout == "kitti":
        cam_from_imu = inverse(rig.cam_to_imu)
        poses = tuple(compose(p, cam_from_imu) for p in gt.poses)
        return Trajectory(gt.times, poses)
    return gt


def _interval_samples(samples, t0_ns, t1_ns):
    return [s for s in samples if t0_ns <= s.t_ns <= t1_ns]


def _interval_context(gt_body, k, gravity):
    """(v0_body, world rotation, dt) for the interval starting at frame k.

    Start velocity comes from the ground-truth position finite difference,
    expressed in the start body frame.
    """
    dt = float(gt_body.times[k + 1] - gt_body.times[k])
    p0 = gt_body.poses[k].translation
    p1 = gt_body.poses[k + 1].translation
    r0 = gt_body.poses[k].rotation
    v0_body = r0.m.T @ ((p1 - p0) / dt)
    return v0_body, r0, dt


def cmd_preintegrate(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)

    manifest, samples = _parse_dataset(args, cfg)
    if samples is None:
        raise errors.ParseError("dataset has no IMU stream", path=args.dataset)
    gt_body = _body_ground_truth(manifest, args.layout, manifest.rig)
    noise = cfg.noise_model()
    gravity = cfg.gravity()

    rows = []
    skipped = 0
    for k in range(len(manifest) - 1):
        chunk = _interval_samples(samples, manifest.frame_t_ns[k],
                                  manifest.frame_t_ns[k + 1])
        if len(chunk) < 2:
            skipped += 1
            continue
        delta = preintegrate(chunk, ImuStatus.zero(), noise)
        v0_body, r0, _ = _interval_context(gt_body, k, gravity)
        from viogeom.imu import delta_to_relative_se3

        xi = delta_to_relative_se3(delta, v0_body, gravity, r0)
        rows.append((manifest.frame_t_ns[k + 1], xi, delta.pose_information()))

    write_tangents(out_dir / "imu_se3.txt", rows)
    _write_summary(out_dir, [
        ("intervals", len(manifest) - 1),
        ("intervals_written", len(rows)),
        ("intervals_skipped", skipped),
    ])
    return EXIT_OK


def cmd_update_bias(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)

    manifest, samples = _parse_dataset(args, cfg)
    if samples is None:
        raise errors.ParseError("dataset has no IMU stream", path=args.dataset)
    gt_body = _body_ground_truth(manifest, args.layout, manifest.rig)
    labels = read_tangents(args.labels)
    label_by_end = {t: xi for t, xi, _ in labels}

    rig = manifest.rig
    noise = cfg.noise_model()
    gravity = cfg.gravity()
    params = cfg.update_params()
    window = max(int(cfg["update.window_intervals"]), 1)

    # camera-frame labels -> body-frame relative motion -> delta space
    t_bc = rig.cam_to_imu
    t_cb = inverse(t_bc)

    def body_reference(k):
        xi_cam = label_by_end.get(manifest.frame_t_ns[k + 1])
        if xi_cam is None:
            return None
        rel_body = compose(t_bc, compose(se3_exp(xi_cam), t_cb))
        v0_body, r0, dt = _interval_context(gt_body, k, gravity)
        return delta_space_reference(se3_log(rel_body), v0_body, gravity, r0, dt)

    pairs = []
    for k in range(len(manifest) - 1):
        chunk = _interval_samples(samples, manifest.frame_t_ns[k],
                                  manifest.frame_t_ns[k + 1])
        ref = body_reference(k)
        if ref is None or len(chunk) < 2:
            continue
        pairs.append((manifest.frame_t_ns[k + 1], chunk, ref))

    out_rows = []
    status = ImuStatus.zero()
    for start in range(0, max(len(pairs) - window + 1, 1), window):
        chunk = pairs[start:start + window]
        if not chunk:
            break
        result = update_status_windows([(s, r) for _, s, r in chunk], status,
                                       noise, params)
        status = result.status
        out_rows.append((chunk[-1][0], status, result.converged, result.cost))

    with open(out_dir / "bias_timeline.csv", "w") as f:
        f.write("#t_ns,bg_x,bg_y,bg_z,ba_x,ba_y,ba_z,converged,cost\n")
        for t, st, conv, cost in out_rows:
            fields = [str(t)]
            fields += [repr(float(v)) for v in (*st.bg, *st.ba)]
            fields += ["1" if conv else "0", repr(float(cost))]
            f.write(",".join(fields) + "\n")

    _write_summary(out_dir, [
        ("windows", len(out_rows)),
        ("intervals_used", len(pairs)),
        ("final_bg", " ".join(repr(float(v)) for v in status.bg)),
        ("final_ba", " ".join(repr(float(v)) for v in status.ba)),
    ])
    return EXIT_OK


# --------------------------------------------------------------------------
# eval / degrade / synth / flow-compare
# --------------------------------------------------------------------------

def cmd_eval(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    est = _load_any_trajectory(args.est)
    gt = _load_any_trajectory(args.gt)
    report = kitti_relative_errors(est, gt, lengths=tuple(cfg["eval.lengths"]),
                                   stride=cfg["eval.stride"])
    ate = ate_rmse(est, gt)

    lines = [
        f"trajectory pairs compared: {len(est)} poses",
        f"t_rel: {report.t_rel_percent:.4f} %",
        f"r_rel: {report.r_rel_deg_per_100m:.4f} deg/100m",
        f"ate_rmse: {ate:.4f} m",
    ]
    for l, bucket in sorted(report.per_length.items()):
        lines.append(
            f"  length {int(l):4d} m: t_rel {bucket.t_rel_percent:.4f} %  "
            f"r_rel {bucket.r_rel_deg_per_100m:.4f} deg/100m  "
            f"({bucket.window_count} windows)")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")

    rows = [
        ("t_rel_percent", repr(report.t_rel_percent)),
        ("r_rel_deg_per_100m", repr(report.r_rel_deg_per_100m)),
        ("ate_rmse_m", repr(ate)),
        ("windows", report.window_count),
    ]
    for l, bucket in sorted(report.per_length.items()):
        rows.append((f"t_rel_{int(l)}m", repr(bucket.t_rel_percent)))
        rows.append((f"r_rel_{int(l)}m", repr(bucket.r_rel_deg_per_100m)))
    _write_summary(out_dir, rows)
    return EXIT_OK


def cmd_degrade(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest, samples = _parse_dataset(args, cfg)
    if samples is None:
        samples = []
    spec = cfg.degradation()
    manifest2, samples2 = apply_degradation(manifest, samples, spec)

    # re-emit in the original on-disk layout
    if args.layout == "kitti":
        seq = manifest2.sequence or "00"
        seq_dir = out_dir / "sequences" / seq
        disp_dir = seq_dir / cfg["kitti.disparity_dir"]
        disp_dir.mkdir(parents=True, exist_ok=True)
        (seq_dir / "image_2").mkdir(exist_ok=True)
        (seq_dir / "image_3").mkdir(exist_ok=True)
        (out_dir / "poses").mkdir(exist_ok=True)
        kitti_io.write_kitti_times(seq_dir / "times.txt", manifest2.frame_t_ns)
        kitti_io.write_kitti_calib(seq_dir / "calib.txt", manifest2.rig)
        if manifest2.ground_truth is not None:
            kitti_io.write_kitti_poses(out_dir / "poses" / f"{seq}.txt",
                                       manifest2.ground_truth)
        kitti_io.write_kitti_oxts(out_dir, samples2)
        for i, src in enumerate(manifest2.disparity_paths):
            if src is not None and Path(src).is_file():
                (disp_dir / f"{i:06d}.png").write_bytes(Path(src).read_bytes())
    else:
        mav = out_dir / "mav0"
        (mav / "imu0").mkdir(parents=True, exist_ok=True)
        (mav / "cam0" / "data").mkdir(parents=True, exist_ok=True)
        (mav / "disp0").mkdir(exist_ok=True)
        euroc_io.write_imu_csv(mav / "imu0" / "data.csv", samples2)
        frames = [(t, f"{t}.png") for t in manifest2.frame_t_ns]
        euroc_io.write_camera_csv(mav / "cam0" / "data.csv", frames)
        if manifest2.ground_truth is not None:
            (mav / "state_groundtruth_estimate0").mkdir(exist_ok=True)
            euroc_io.write_groundtruth_csv(
                mav / "state_groundtruth_estimate0" / "data.csv",
                manifest2.ground_truth)
        for t, src in zip(manifest2.frame_t_ns, manifest2.disparity_paths):
            if src is not None and Path(src).is_file():
                (mav / "disp0" / f"{t}.png").write_bytes(Path(src).read_bytes())

    # the degraded rig (miscalibration) must reach downstream stages
    cfg.values["rig.cam_to_imu"] = list(manifest2.rig.cam_to_imu.matrix34().ravel())
    _echo_config(cfg, out_dir)
    save_run_config(out_dir / "run_config.degraded", cfg)

    _write_summary(out_dir, [
        ("frames_in", len(manifest)),
        ("frames_out", len(manifest2)),
        ("imu_in", len(samples)),
        ("imu_out", len(samples2)),
        ("miscal_deg", repr(float(spec.miscal_deg))),
        ("desync_ms", repr(float(spec.desync_ms))),
    ])
    return EXIT_OK


def cmd_synth(args):
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    noise = cfg.noise_model() if cfg["synth.noise"] else ImuNoiseModel(0, 0, 0, 0)
    bias = ImuStatus(ba=cfg["synth.bias_ba"], bg=cfg["synth.bias_bg"])
    scene = vehicle_scene(
        duration=cfg["synth.duration"],
        speed=cfg["synth.speed"],
        landmark_count=cfg["synth.landmarks"],
        dynamic_count=cfg["synth.dynamic_landmarks"],
        dynamic_speed=cfg["synth.dynamic_speed"],
        imu_rate=cfg["synth.imu_rate"],
        cam_rate=cfg["synth.cam_rate"],
        seed=cfg["seed"],
        image_width=cfg["rig.width"],
        image_height=cfg["rig.height"],
        true_bias=bias,
        noise=noise,
    )
    emit_dataset(scene, args.layout, out_dir, cfg.rig())
    _echo_config(cfg, out_dir)
    _write_summary(out_dir, [
        ("layout", args.layout),
        ("frames", int(round(cfg["synth.duration"] * cfg["synth.cam_rate"])) + 1),
        ("imu_samples", int(round(cfg["synth.duration"] * cfg["synth.imu_rate"])) + 1),
        ("landmarks", cfg["synth.landmarks"]),
    ])
    return EXIT_OK


def cmd_flow_compare(args):
    a = load_flow_field(args.flow_a, args.mask_a)
    b = load_flow_field(args.flow_b, args.mask_b)
    stats = epe(a, b)
    rows = [
        ("epe_sum", repr(stats.sum)),
        ("epe_mean", repr(stats.mean)),
        ("pixels", stats.count),
    ]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_summary(args.out, rows)
    else:
        for k, v in rows:
            print(f"{k}={v}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument wiring
# --------------------------------------------------------------------------

def _build_parser():
    parser = _Parser(
        prog="viogeom",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", default=os.environ.get("VIOGEOM_CONFIG"),
                       help="run configuration file (defaults apply when omitted)")
        p.add_argument("--seed", type=int,
                       default=(int(os.environ["VIOGEOM_SEED"])
                                if "VIOGEOM_SEED" in os.environ else None),
                       help="override the configuration seed")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset root directory")
            p.add_argument("--layout", choices=("kitti", "euroc"), default="kitti")
            p.add_argument("--sequence", default="00",
                           help="sequence id for the kitti layout")

    p = sub.add_parser("synth", help="emit a synthetic dataset")
    common(p, dataset=False)
    p.add_argument("--layout", choices=("kitti", "euroc"), default="kitti")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("supervise", help="generate flow/pose supervision labels")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("VIOGEOM_WORKERS", "1")))
    p.set_defaults(fn=cmd_supervise)

    p = sub.add_parser("preintegrate", help="per-interval IMU relative poses")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preintegrate)

    p = sub.add_parser("update-bias", help="pose-feedback bias estimation")
    common(p)
    p.add_argument("--labels", required=True,
                   help="stereo_se3.txt produced by supervise")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_update_bias)

    p = sub.add_parser("eval", help="relative/absolute trajectory errors")
    common(p, dataset=False)
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("degrade", help="apply robustness conditions to a dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("flow-compare", help="endpoint error between two .flo files")
    p.add_argument("flow_a")
    p.add_argument("flow_b")
    p.add_argument("--mask-a", default=None)
    p.add_argument("--mask-b", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_flow_compare)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.ParseError, errors.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except errors.ViogeomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
