"""Command-line interface: exit codes, file outputs, reproducibility."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from helpers import dbm_to_watts, sample_sensors, table_geometry
from leakloc.cli import main
from leakloc.deepsets import load_model
from leakloc.geometry import UeLocation
from leakloc.harness import read_dataset, read_sweep
from leakloc.leakage import LeakageBackend, leakage_pattern
from leakloc.observation import NoiseModel, sample_block

CONFIG = """\
[scenario]
n_elements = 100
carrier_ghz = 15.0
ue_d_range_m = [2.0, 12.0]
ue_phi_range_rad = [0.5235987755982988, 2.6179938779914944]
p_t_dbm = 23.0
sigma2_dbm = -75.0
snapshots = 10
seed = 11

[bcrlb]
k_grid = [5]
l_grid = [1]
sigma2_dbm_grid = [-75.0]
n_geometries = 2
n_prior_samples = 8
"""


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(CONFIG)
    return path


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["bogus"]) == 1
        assert "invalid choice" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert main(["bcrlb", "--config", "/no/such.toml",
                     "--out", "x"]) == 1
        assert "not found" in capsys.readouterr().err

    def test_config_without_scenario(self, tmp_path, capsys):
        p = tmp_path / "empty.toml"
        p.write_text("[bcrlb]\n")
        assert main(["bcrlb", "--config", str(p), "--out", "x"]) == 1
        assert "no [scenario]" in capsys.readouterr().err

    def test_malformed_toml(self, tmp_path, capsys):
        p = tmp_path / "broken.toml"
        p.write_text("[scenario\n")
        assert main(["bcrlb", "--config", str(p), "--out", "x"]) == 1
        assert "invalid TOML" in capsys.readouterr().err

    def test_missing_out(self, config, capsys):
        assert main(["bcrlb", "--config", str(config)]) == 1
        assert "--out" in capsys.readouterr().err

    def test_unknown_backend(self, config, tmp_path, capsys):
        assert main(["bcrlb", "--config", str(config),
                     "--out", str(tmp_path / "x"),
                     "--backend", "magic"]) == 1
        assert "unknown backend" in capsys.readouterr().err


class TestBcrlbCommand:
    def test_writes_sweep_and_sidecar(self, config, tmp_path, capsys):
        out = tmp_path / "runs" / "bounds"
        assert main(["bcrlb", "--config", str(config),
                     "--out", str(out)]) == 0
        assert "bounds.csv (1 rows)" in capsys.readouterr().out
        res = read_sweep(out.with_suffix(".csv"))
        assert len(res.rows) == 1
        row = res.rows[0]
        assert (row.k_sensors, row.n_snapshots, row.sigma2_dbm) == (5, 1,
                                                                    -75.0)
        assert row.n_trials == 2
        assert res.meta["tool"] == "bcrlb"

    def test_flags_override_config_table(self, config, tmp_path):
        out = tmp_path / "bounds"
        assert main(["bcrlb", "--config", str(config), "--out", str(out),
                     "--K", "4,6", "--L", "1", "50",
                     "--sigma2=-65,-85"]) == 0
        res = read_sweep(out.with_suffix(".csv"))
        assert len(res.rows) == 8
        assert sorted({r.k_sensors for r in res.rows}) == [4, 6]
        assert sorted({r.sigma2_dbm for r in res.rows}) == [-85.0, -65.0]

    def test_sidecar_feeds_back_and_reproduces_bitwise(self, config,
                                                       tmp_path):
        first = tmp_path / "a"
        assert main(["bcrlb", "--config", str(config),
                     "--out", str(first)]) == 0
        second = tmp_path / "b"
        assert main(["bcrlb", "--config", str(first.with_suffix(".json")),
                     "--out", str(second)]) == 0
        assert (first.with_suffix(".csv").read_bytes()
                == second.with_suffix(".csv").read_bytes())


class TestEvaluateCommand:
    def test_grid_search_sweep(self, config, tmp_path):
        out = tmp_path / "mse"
        assert main(["evaluate", "--config", str(config), "--out", str(out),
                     "--K", "4", "--L", "10", "--sigma2=-70",
                     "--methods", "grid_search", "--trials", "3",
                     "--sensor-sets", "1", "--prior-samples", "8",
                     "--grid-d", "25", "--grid-phi", "30"]) == 0
        res = read_sweep(out.with_suffix(".csv"))
        assert [r.method for r in res.rows] == ["grid_search"]
        assert res.rows[0].n_trials == 3
        assert res.rows[0].mse_d_m2 >= 0.0
        assert res.meta["grid"]["n_d"] == 25

    def test_sidecar_feeds_back_and_reproduces_bitwise(self, config,
                                                       tmp_path):
        args = ["--K", "4", "--L", "10", "--sigma2=-70",
                "--methods", "grid_search", "--trials", "2",
                "--sensor-sets", "1", "--prior-samples", "8",
                "--grid-d", "20", "--grid-phi", "24"]
        first = tmp_path / "a"
        assert main(["evaluate", "--config", str(config),
                     "--out", str(first), *args]) == 0
        second = tmp_path / "b"
        assert main(["evaluate", "--config", str(first.with_suffix(".json")),
                     "--out", str(second)]) == 0
        assert (first.with_suffix(".csv").read_bytes()
                == second.with_suffix(".csv").read_bytes())


class TestEstimateCommand:
    @pytest.fixture()
    def measurements(self, tmp_path):
        geom = table_geometry()
        rng = np.random.default_rng(7)
        sensors = sample_sensors(rng, 12)
        psi = UeLocation(6.0, math.pi / 2)
        pattern = leakage_pattern(LeakageBackend.EXACT, geom, psi, sensors,
                                  dbm_to_watts(23.0))
        block = sample_block(pattern, NoiseModel(dbm_to_watts(-75.0)), 50,
                             seed=2)
        path = tmp_path / "meas.csv"
        lines = ["sensor_id,d_k_m,theta_k_rad,z_mean"]
        for i in range(len(sensors)):
            lines.append(f"{i},{float(sensors.ranges_m[i])!r},"
                         f"{float(sensors.azimuths_rad[i])!r},"
                         f"{float(block.mean_normalized[i])!r}")
        path.write_text("\n".join(lines) + "\n")
        return path, psi

    def test_estimates_near_truth(self, config, measurements, capsys):
        path, psi = measurements
        assert main(["estimate", "--config", str(config),
                     "--measurements", str(path)]) == 0
        out = capsys.readouterr().out
        fields = dict(kv.split("=") for kv in out.split())
        assert abs(float(fields["d_hat_m"]) - psi.distance_m) < 0.5
        assert abs(float(fields["phi_hat_rad"]) - psi.azimuth_rad) < 0.05

    def test_writes_result_file_on_request(self, config, measurements,
                                           tmp_path):
        path, _ = measurements
        out = tmp_path / "est"
        assert main(["estimate", "--config", str(config),
                     "--measurements", str(path), "--out", str(out)]) == 0
        text = out.with_suffix(".csv").read_text().splitlines()
        assert text[0] == "d_hat_m,phi_hat_rad,objective"
        side = json.loads(out.with_suffix(".json").read_text())
        assert side["tool"] == "estimate"

    def test_requires_measurements_flag(self, config, capsys):
        assert main(["estimate", "--config", str(config)]) == 1
        assert "--measurements" in capsys.readouterr().err

    def test_rejects_missing_columns(self, config, tmp_path, capsys):
        p = tmp_path / "short.csv"
        p.write_text("sensor_id,z_mean\n0,1.0\n")
        assert main(["estimate", "--config", str(config),
                     "--measurements", str(p)]) == 1
        assert "lacks columns" in capsys.readouterr().err


class TestDatasetAndTrainCommands:
    def test_dataset_then_train_chain(self, config, tmp_path, capsys):
        ds = tmp_path / "ds"
        assert main(["dataset", "--config", str(config), "--out", str(ds),
                     "--K", "5", "--train", "40", "--val", "15",
                     "--test", "5", "--seed", "3"]) == 0
        splits, sensors, meta = read_dataset(ds.with_suffix(".csv"))
        assert len(sensors) == 5
        assert {k: len(v) for k, v in splits.items()} == {
            "train": 40, "val": 15, "test": 5}
        assert meta["tool"] == "dataset"
        assert "sensors" in meta["scenario"]

        net = tmp_path / "net"
        assert main(["train", "--dataset", str(ds.with_suffix(".csv")),
                     "--out", str(net), "--width", "8", "--epochs", "6",
                     "--patience", "20", "--seed", "1"]) == 0
        capsys.readouterr()
        model = load_model(net.with_suffix(".npz"))
        assert model.width == 8
        side = json.loads(net.with_suffix(".json").read_text())
        assert side["tool"] == "train"
        assert len(side["val_loss"]) == side["best_epoch"] + 1
        assert "test_mse_d_m2" in side

    def test_dataset_reruns_reproduce_bitwise(self, config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["--config", str(config), "--K", "4", "--train", "6",
                "--val", "3", "--test", "2", "--seed", "9"]
        assert main(["dataset", *args, "--out", str(a)]) == 0
        assert main(["dataset", *args, "--out", str(b)]) == 0
        assert (a.with_suffix(".csv").read_bytes()
                == b.with_suffix(".csv").read_bytes())

    def test_dataset_needs_a_sensor_count(self, config, tmp_path, capsys):
        assert main(["dataset", "--config", str(config),
                     "--out", str(tmp_path / "ds")]) == 1
        assert "sensor count" in capsys.readouterr().err

    def test_diverged_training_exits_2_without_output(self, config, tmp_path,
                                                      capsys):
        ds = tmp_path / "ds"
        assert main(["dataset", "--config", str(config), "--out", str(ds),
                     "--K", "4", "--train", "20", "--val", "8", "--test",
                     "0", "--seed", "3"]) == 0
        net = tmp_path / "net"
        assert main(["train", "--dataset", str(ds.with_suffix(".csv")),
                     "--out", str(net), "--width", "8", "--epochs", "5",
                     "--patience", "9", "--lr", "1e12"]) == 2
        assert "numerical failure" in capsys.readouterr().err
        assert not net.with_suffix(".npz").exists()


class TestLeakmapCommand:
    def test_writes_both_backend_columns(self, config, tmp_path):
        out = tmp_path / "map"
        assert main(["leakmap", "--config", str(config), "--out", str(out),
                     "--d", "6.0", "--phi", "1.5707963267948966",
                     "--n-theta", "9"]) == 0
        lines = out.with_suffix(".csv").read_text().splitlines()
        assert lines[0] == "theta_rad,gain_exact,gain_fresnel"
        assert len(lines) == 10
        mid = [float(v) for v in lines[5].split(",")]
        # the focal azimuth leaks real power, but the focusing curvature
        # keeps a far-field observer well below the coherent N-fold gain
        assert 1.0 < mid[1] < 100.0
        assert mid[2] == pytest.approx(mid[1], rel=1e-3)

    def test_single_backend_column(self, config, tmp_path):
        out = tmp_path / "map"
        assert main(["leakmap", "--config", str(config), "--out", str(out),
                     "--d", "6.0", "--phi", "1.2", "--n-theta", "5",
                     "--backend", "exact"]) == 0
        lines = out.with_suffix(".csv").read_text().splitlines()
        assert lines[0] == "theta_rad,gain_exact"

    def test_requires_focal_point(self, config, tmp_path, capsys):
        assert main(["leakmap", "--config", str(config),
                     "--out", str(tmp_path / "m")]) == 1
        assert "--d and --phi" in capsys.readouterr().err

    def test_rejects_bad_angle_window(self, config, tmp_path, capsys):
        assert main(["leakmap", "--config", str(config),
                     "--out", str(tmp_path / "m"), "--d", "6", "--phi",
                     "1.5", "--theta-min", "2.0", "--theta-max", "1.0"]) == 1
        assert "theta_min" in capsys.readouterr().err


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "leakloc.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
