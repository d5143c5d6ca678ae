from pathlib import Path

import numpy as np
import pytest

from viogeom.errors import ConfigError
from viogeom.io.runconfig import RunConfig, dump, load_run_config, loads, save_run_config

DOCS = Path(__file__).resolve().parent.parent / "docs"


class TestParsing:
    def test_empty_text_gives_all_defaults(self):
        cfg = loads("")
        assert cfg["rig.fx"] == 500.0
        assert cfg["icp.max_iterations"] == 50
        assert cfg["flow.mode"] == "endpoint"
        # every schema key is present
        assert all("=" in line for line in dump(cfg).strip().splitlines())

    def test_comments_and_blank_lines(self):
        cfg = loads("# comment\n\nrig.fx = 600.0  # trailing\n")
        assert cfg["rig.fx"] == 600.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            loads("rig.focal = 5\n")
        assert "rig.focal" in str(err.value)

    def test_type_error_reports_key_path(self):
        with pytest.raises(ConfigError) as err:
            loads("icp.max_iterations = many\n")
        assert "icp.max_iterations" in str(err.value)

    def test_invalid_depth_band_rejected(self):
        with pytest.raises(ConfigError):
            loads("depth.near = 5\ndepth.far = 5\n")

    def test_bad_flow_mode_rejected(self):
        with pytest.raises(ConfigError):
            loads("flow.mode = sideways\n")

    def test_vector_value(self):
        cfg = loads("imu.gravity = 0 0 -9.80665\n")
        assert np.allclose(cfg.gravity(), [0, 0, -9.80665])

    def test_oxts_map(self):
        cfg = loads("kitti.oxts_map = 00:raw/a, 04:raw/b\n")
        assert cfg["kitti.oxts_map"] == {"00": "raw/a", "04": "raw/b"}


class TestAccessors:
    def test_rig_construction(self):
        cfg = loads("rig.cam_to_imu = 0 0 1 0  -1 0 0 0  0 -1 0 0\n")
        rig = cfg.rig()
        assert np.allclose(rig.cam_to_imu.rotation.m,
                           [[0, 0, 1], [-1, 0, 0], [0, -1, 0]])

    def test_icp_and_update_params(self):
        cfg = loads("icp.trim_fraction = 0.3\nupdate.huber_delta = 2.0\n")
        assert cfg.icp_params().trim_fraction == 0.3
        assert cfg.update_params().huber_delta == 2.0

    def test_degradation_spec(self):
        cfg = loads("degrade.imu_drop_rate = 0.9\ndegrade.seed = 5\n")
        spec = cfg.degradation()
        assert spec.imu_drop_rate == 0.9
        assert spec.seed == 5


class TestRoundTrip:
    def test_dump_parses_back_identically(self):
        cfg = loads("rig.fx = 718.856\nicp.trim_fraction = 0.25\nseed = 9\n")
        again = loads(dump(cfg))
        assert again.values == cfg.values

    def test_save_and_load(self, tmp_path):
        cfg = loads("depth.far = 60\n")
        save_run_config(tmp_path / "run.cfg", cfg)
        back = load_run_config(tmp_path / "run.cfg")
        assert back.values == cfg.values

    def test_docs_example_matches_golden_echo(self):
        cfg = load_run_config(DOCS / "example_run.cfg")
        golden = (DOCS / "example_run.echo").read_text()
        assert dump(cfg) == golden
