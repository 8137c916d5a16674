"""Experiment harness: scenarios, sweeps, and the file formats."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from helpers import LAMBDA_TAB, P_T_TAB, dbm_to_watts, table_geometry
from leakloc.deepsets import SetSample, TrainConfig, make_dataset
from leakloc.fisher import BetaPrior
from leakloc.geometry import SensorSet, UeLocation
from leakloc.harness import (
    DeepSetsProfile,
    Scenario,
    SweepResult,
    SweepRow,
    read_dataset,
    read_sweep,
    run_bcrlb_sweep,
    run_mse_sweep,
    sample_sensor_set,
    scenario_from_config,
    scenario_to_config,
    sidecar_path,
    watts_to_dbm,
    write_dataset,
    write_sweep,
)

D_BOX = (2.0, 12.0)
PHI_BOX = (math.pi / 6.0, 5.0 * math.pi / 6.0)


def scenario(**overrides) -> Scenario:
    base = dict(
        geom=table_geometry(),
        ue_box=(D_BOX, PHI_BOX),
        prior=BetaPrior(2.0, 2.0, *D_BOX),
        p_t_watts=P_T_TAB,
        sigma2_watts=dbm_to_watts(-75.0),
        n_snapshots=10,
        seed=17,
    )
    base.update(overrides)
    return Scenario(**base)


class TestScenario:
    def test_accepts_reference_setting(self):
        s = scenario()
        assert s.d_range_m == D_BOX
        assert s.phi_range_rad == PHI_BOX

    def test_distance_box_below_focusing_region(self):
        with pytest.raises(ValueError, match="focusing region"):
            scenario(ue_box=((1.0, 12.0), PHI_BOX),
                     prior=BetaPrior(2.0, 2.0, 1.0, 12.0))

    def test_distance_box_beyond_focusing_region(self):
        far = table_geometry().rayleigh_distance_m / 8.0
        with pytest.raises(ValueError, match="focusing region"):
            scenario(ue_box=((2.0, far + 1.0), PHI_BOX),
                     prior=BetaPrior(2.0, 2.0, 2.0, far + 1.0))

    def test_azimuth_box_must_be_interior(self):
        with pytest.raises(ValueError, match="azimuth"):
            scenario(ue_box=(D_BOX, (0.0, math.pi)))

    def test_prior_support_must_match_distance_box(self):
        with pytest.raises(ValueError, match="prior support"):
            scenario(prior=BetaPrior(2.0, 2.0, 3.0, 12.0))

    def test_rejects_nonpositive_powers(self):
        with pytest.raises(ValueError, match="transmit power"):
            scenario(p_t_watts=0.0)
        with pytest.raises(ValueError, match="noise power"):
            scenario(sigma2_watts=-1.0)

    def test_rejects_zero_snapshots(self):
        with pytest.raises(ValueError, match="snapshot"):
            scenario(n_snapshots=0)

    def test_sensor_range_must_start_beyond_far_field_boundary(self):
        d_f = table_geometry().rayleigh_distance_m
        with pytest.raises(ValueError, match="far-field"):
            scenario(sensor_range_m=(d_f - 1.0, 150.0))

    def test_sensor_azimuth_interval_checked(self):
        with pytest.raises(ValueError, match="sensor azimuth"):
            scenario(sensor_azimuth_rad=(0.0, 3.5))

    def test_fixed_sensors_must_lie_in_intervals(self):
        bad = SensorSet([120.0, 160.0], [1.0, 2.0])
        with pytest.raises(ValueError, match="inside the"):
            scenario(sensors=bad)

    def test_fixed_sensors_accepted_when_inside(self):
        s = scenario(sensors=SensorSet([120.0, 140.0], [1.0, 2.0]))
        assert len(s.sensors) == 2


class TestUnits:
    def test_dbm_conversion_closed_form(self):
        assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-15)
        assert dbm_to_watts(0.0) == pytest.approx(1e-3, rel=1e-15)
        assert watts_to_dbm(1.0) == pytest.approx(30.0, abs=1e-12)

    def test_roundtrip(self):
        for dbm in (-85.0, -65.0, 0.0, 23.0):
            assert watts_to_dbm(dbm_to_watts(dbm)) == pytest.approx(
                dbm, abs=1e-12)


class TestScenarioConfig:
    def test_roundtrip_is_bitwise(self):
        s = scenario(sensors=SensorSet([110.0, 130.0], [0.4, 2.1]))
        back = scenario_from_config({"scenario": scenario_to_config(s)})
        assert back.geom.wavelength_m == s.geom.wavelength_m
        assert back.geom.spacing_m == s.geom.spacing_m
        assert back.p_t_watts == s.p_t_watts
        assert back.sigma2_watts == s.sigma2_watts
        assert back.ue_box == s.ue_box
        assert back.seed == s.seed
        assert np.array_equal(back.sensors.ranges_m, s.sensors.ranges_m)

    def test_roundtrip_survives_json(self):
        s = scenario()
        cfg = json.loads(json.dumps(scenario_to_config(s)))
        back = scenario_from_config(cfg)
        assert back.sigma2_watts == s.sigma2_watts
        assert back.geom.wavelength_m == s.geom.wavelength_m

    def test_display_units_accepted(self):
        cfg = {
            "n_elements": 100,
            "carrier_ghz": 15.0,
            "ue_d_range_m": [2.0, 12.0],
            "ue_phi_range_rad": list(PHI_BOX),
            "p_t_dbm": 23.0,
            "sigma2_dbm": -75.0,
            "snapshots": 10,
        }
        s = scenario_from_config(cfg)
        assert s.geom.wavelength_m == pytest.approx(LAMBDA_TAB, rel=1e-15)
        assert s.geom.spacing_m == pytest.approx(LAMBDA_TAB / 2, rel=1e-15)
        assert s.p_t_watts == pytest.approx(P_T_TAB, rel=1e-15)

    def test_si_keys_win_over_display_keys(self):
        cfg = scenario_to_config(scenario())
        cfg["sigma2_dbm"] = -200.0  # stale display value must be ignored
        s = scenario_from_config(cfg)
        assert s.sigma2_watts == dbm_to_watts(-75.0)

    def test_missing_key_is_reported_by_name(self):
        with pytest.raises(ValueError, match="n_elements"):
            scenario_from_config({"carrier_ghz": 15.0})


class TestSampleSensorSet:
    def test_deterministic_per_seed(self):
        s = scenario()
        a = sample_sensor_set(s, 8, 3)
        b = sample_sensor_set(s, 8, 3)
        c = sample_sensor_set(s, 8, 4)
        assert np.array_equal(a.ranges_m, b.ranges_m)
        assert not np.array_equal(a.ranges_m, c.ranges_m)

    def test_respects_configured_intervals(self):
        s = scenario(sensor_range_m=(120.0, 125.0),
                     sensor_azimuth_rad=(1.0, 1.5))
        got = sample_sensor_set(s, 200, 0)
        assert got.ranges_m.min() >= 120.0 and got.ranges_m.max() <= 125.0
        assert got.azimuths_rad.min() >= 1.0
        assert got.azimuths_rad.max() <= 1.5

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError, match="at least one"):
            sample_sensor_set(scenario(), 0, 1)


class TestSweepRows:
    def test_rows_sorted_on_construction(self):
        row = lambda k, l, s, m: SweepRow(k, l, s, m, None, None, 1.0, 1.0,
                                          3, 0)
        rows = [row(40, 1, -65.0, "bcrlb"), row(20, 50, -85.0, "bcrlb"),
                row(20, 1, -85.0, "grid_search"), row(20, 1, -85.0, "bcrlb")]
        res = SweepResult(tuple(rows), {})
        key = [(r.k_sensors, r.n_snapshots, r.sigma2_dbm, r.method)
               for r in res.rows]
        assert key == sorted(key)

    def test_row_rejects_negative_mse(self):
        with pytest.raises(ValueError):
            SweepRow(5, 1, -75.0, "grid_search", -1.0, 0.1, 1.0, 1.0, 3, 0)


@pytest.fixture(scope="module")
def bound_sweep():
    return run_bcrlb_sweep(scenario(), [5, 10], [1, 50], [-65.0, -85.0],
                           n_geometries=4, n_prior_samples=24, seed=9)


@pytest.fixture(scope="module")
def mse_sweep():
    profile = DeepSetsProfile(
        width=8, n_train=40, n_val=15,
        train_config=TrainConfig(max_epochs=6, patience=20))
    return run_mse_sweep(scenario(), [4], [50], [-70.0],
                         methods=("grid_search", "deepsets"),
                         n_trials=5, n_sensor_sets=2,
                         n_prior_samples=16, profile=profile, seed=2)


@pytest.fixture(scope="module")
def dataset_payload():
    s = scenario(sensors=SensorSet([110.0, 125.0, 140.0], [0.7, 1.6, 2.4]))
    tr, va, te = make_dataset(s, 6, 3, 2, seed=12)
    return s, {"train": tr, "val": va, "test": te}


class TestBcrlbSweep:
    def test_full_grid_of_rows(self, bound_sweep):
        assert len(bound_sweep.rows) == 8
        cells = {(r.k_sensors, r.n_snapshots, r.sigma2_dbm)
                 for r in bound_sweep.rows}
        assert len(cells) == 8
        assert all(r.method == "bcrlb" for r in bound_sweep.rows)
        assert all(r.mse_d_m2 is None and r.mse_phi_rad2 is None
                   for r in bound_sweep.rows)
        assert all(r.n_trials == 4 for r in bound_sweep.rows)

    def test_bounds_shrink_with_more_sensors_and_snapshots(self, bound_sweep):
        by_cell = {(r.k_sensors, r.n_snapshots, r.sigma2_dbm): r
                   for r in bound_sweep.rows}
        for sig in (-65.0, -85.0):
            for l in (1, 50):
                assert (by_cell[(10, l, sig)].bound_d_m2
                        < by_cell[(5, l, sig)].bound_d_m2)
            for k in (5, 10):
                assert (by_cell[(k, 50, sig)].bound_d_m2
                        < by_cell[(k, 1, sig)].bound_d_m2)

    def test_bounds_grow_with_noise(self, bound_sweep):
        by_cell = {(r.k_sensors, r.n_snapshots, r.sigma2_dbm): r
                   for r in bound_sweep.rows}
        for k in (5, 10):
            for l in (1, 50):
                assert (by_cell[(k, l, -65.0)].bound_d_m2
                        > by_cell[(k, l, -85.0)].bound_d_m2)

    def test_azimuth_tighter_than_distance(self, bound_sweep):
        assert all(r.bound_phi_rad2 < r.bound_d_m2 for r in bound_sweep.rows)

    def test_deterministic_per_seed(self, bound_sweep):
        again = run_bcrlb_sweep(scenario(), [5, 10], [1, 50], [-65.0, -85.0],
                                n_geometries=4, n_prior_samples=24, seed=9)
        assert again.rows == bound_sweep.rows

    def test_seed_defaults_to_scenario_seed(self):
        s = scenario(seed=23)
        a = run_bcrlb_sweep(s, [5], [1], [-75.0], n_geometries=2,
                            n_prior_samples=8)
        b = run_bcrlb_sweep(s, [5], [1], [-75.0], n_geometries=2,
                            n_prior_samples=8, seed=23)
        assert a.rows == b.rows
        assert a.rows[0].seed == 23

    def test_grids_deduplicated_and_sorted(self):
        res = run_bcrlb_sweep(scenario(), [10, 5, 10], [1], [-75.0],
                              n_geometries=2, n_prior_samples=8, seed=1)
        assert [r.k_sensors for r in res.rows] == [5, 10]

    def test_rejects_bad_grid_values(self):
        with pytest.raises(ValueError):
            run_bcrlb_sweep(scenario(), [], [1], [-75.0])
        with pytest.raises(ValueError):
            run_bcrlb_sweep(scenario(), [0], [1], [-75.0])
        with pytest.raises(ValueError):
            run_bcrlb_sweep(scenario(), [5], [1], [-75.0], n_geometries=0)


class TestMseSweep:
    def test_one_row_per_method(self, mse_sweep):
        assert [r.method for r in mse_sweep.rows] == ["deepsets", "grid_search"]

    def test_trials_pooled_over_replications(self, mse_sweep):
        assert all(r.n_trials == 10 for r in mse_sweep.rows)

    def test_methods_share_the_bound(self, mse_sweep):
        a, b = mse_sweep.rows
        assert a.bound_d_m2 == b.bound_d_m2
        assert a.bound_phi_rad2 == b.bound_phi_rad2
        assert all(r.mse_d_m2 >= 0.0 and r.mse_phi_rad2 >= 0.0
                   for r in mse_sweep.rows)

    def test_metadata_names_the_run(self, mse_sweep):
        assert mse_sweep.meta["tool"] == "evaluate"
        assert mse_sweep.meta["trainings_diverged"] == 0
        assert mse_sweep.meta["deepsets_profile"]["width"] == 8

    def test_deterministic_per_seed(self, mse_sweep):
        profile = DeepSetsProfile(
            width=8, n_train=40, n_val=15,
            train_config=TrainConfig(max_epochs=6, patience=20))
        again = run_mse_sweep(scenario(), [4], [50], [-70.0],
                              methods=("grid_search", "deepsets"),
                              n_trials=5, n_sensor_sets=2,
                              n_prior_samples=16, profile=profile, seed=2)
        assert again.rows == mse_sweep.rows

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError, match="unknown methods"):
            run_mse_sweep(scenario(), [4], [1], [-75.0],
                          methods=("ransac",), n_trials=1, n_sensor_sets=1)


class TestSweepFiles:
    def test_roundtrip_is_bitwise(self, tmp_path):
        res = run_bcrlb_sweep(scenario(), [5], [1, 50], [-75.0],
                              n_geometries=2, n_prior_samples=8, seed=5)
        csv_path, side = write_sweep(tmp_path / "bounds", res)
        assert csv_path.name == "bounds.csv" and side.name == "bounds.json"
        back = read_sweep(csv_path)
        assert back.rows == res.rows
        assert back.meta == json.loads(json.dumps(res.meta))

    def test_roundtrip_keeps_missing_mse_and_infinite_bound(self, tmp_path):
        rows = (SweepRow(5, 1, -75.0, "bcrlb", None, None, 2.5, math.inf,
                         3, 0),)
        path, _ = write_sweep(tmp_path / "edge", SweepResult(rows, {"x": 1}))
        back = read_sweep(path)
        assert back.rows[0].mse_d_m2 is None
        assert back.rows[0].bound_phi_rad2 == math.inf

    def test_reader_rejects_foreign_csv(self, tmp_path):
        p = tmp_path / "other.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="not a sweep"):
            read_sweep(p)


class TestDatasetFiles:
    def test_roundtrip_is_bitwise(self, dataset_payload, tmp_path):
        s, splits = dataset_payload
        csv_path, side = write_dataset(tmp_path / "ds", splits, s.sensors,
                                       meta={"tool": "dataset"})
        back, sensors, meta = read_dataset(csv_path)
        assert meta == {"tool": "dataset"}
        assert np.array_equal(sensors.ranges_m, s.sensors.ranges_m)
        for name, samples in splits.items():
            assert len(back[name]) == len(samples)
            for got, want in zip(back[name], samples):
                assert np.array_equal(got.elements, want.elements)
                assert got.label.distance_m == want.label.distance_m
                assert got.label.azimuth_rad == want.label.azimuth_rad

    def test_writer_rejects_foreign_sample(self, dataset_payload, tmp_path):
        s, splits = dataset_payload
        other = SetSample(np.ones((3, 3)), UeLocation(5.0, 1.0))
        with pytest.raises(ValueError, match="different sensor set"):
            write_dataset(tmp_path / "bad", {"train": [other]}, s.sensors)

    def test_reader_checks_split_counts(self, dataset_payload, tmp_path):
        s, splits = dataset_payload
        csv_path, _ = write_dataset(tmp_path / "ds", splits, s.sensors)
        lines = csv_path.read_text().splitlines()
        csv_path.write_text("\n".join(lines[:-len(s.sensors)]) + "\n")
        with pytest.raises(ValueError):
            read_dataset(csv_path)

    def test_reader_requires_matching_sidecar(self, dataset_payload, tmp_path):
        s, splits = dataset_payload
        csv_path, side = write_dataset(tmp_path / "ds", splits, s.sensors)
        doc = json.loads(side.read_text())
        doc["format"] = "something-else"
        side.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="not a dataset"):
            read_dataset(csv_path)

    def test_sidecar_path_swaps_extension(self):
        assert sidecar_path("runs/bounds.csv").name == "bounds.json"
