"""Scenario configuration, sweep drivers, and result files.

This module is the experiment layer: it validates one :class:`Scenario`
against the physical feasibility limits, drives the bound and estimator
sweeps over (sensor count, snapshots, noise) grids, and serializes
results as CSV with a JSON sidecar carrying the fully resolved
configuration. Units cross the boundary exactly once: configs speak
dBm and GHz like the experiment tables, everything past
:func:`scenario_from_config` is watts, meters, and radians.

Seed derivation is one splittable scheme throughout. A master seed
forms a ``numpy.random.SeedSequence`` root; each sensor-set
replication receives one spawned child, which spawns again for the
sensor draw, the prior draws, the per-config trial streams, and the
trainer. Any replication or config cell can therefore be regenerated
alone, and rerunning a sweep with the same master seed reproduces
every row bitwise. Sweeps execute sequentially; rows come out sorted
by (sensor count, snapshots, noise, method) regardless of execution
order, so a parallel scheduler could be dropped in without changing
any output file.

Two deliberate couplings keep bound and estimator columns comparable:
MSE sweeps evaluate trial focal points drawn from the same prior the
bound averages over, and both sweeps reuse one leakage-gradient pass
per sensor geometry, evaluated at the largest requested sensor count
and sliced, so the sensor-count axis is nested rather than resampled.
"""

from __future__ import annotations

import io
import itertools
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .deepsets import (
    SetSample,
    TrainConfig,
    TrainingDiverged,
    forward,
    make_dataset,
    train,
)
from .estimators import GridSpec, grid_search, model_matrix
from .fisher import BetaPrior, bcrlb_from_mean_fim, fim_terms
from .geometry import ArrayGeometry, SensorSet, UeLocation, pathloss
from .leakage import (
    DEFAULT_N_IMAGES,
    LeakageBackend,
    gains_with_gradients,
    leakage_pattern,
)
from .observation import NoiseModel, sample_block

__all__ = [
    "SPEED_OF_LIGHT_M_S",
    "Scenario",
    "SweepRow",
    "SweepResult",
    "DeepSetsProfile",
    "dbm_to_watts",
    "watts_to_dbm",
    "scenario_from_config",
    "scenario_to_config",
    "sample_sensor_set",
    "run_bcrlb_sweep",
    "run_mse_sweep",
    "write_sweep",
    "read_sweep",
    "write_dataset",
    "read_dataset",
    "sidecar_path",
]

SPEED_OF_LIGHT_M_S = 299_792_458.0

_DATASET_FORMAT = "leakloc-dataset"
_DATASET_VERSION = 1
_SWEEP_FORMAT = "leakloc-sweep"
_SWEEP_HEADER = [
    "k_sensors",
    "n_snapshots",
    "sigma2_dbm",
    "method",
    "mse_d_m2",
    "mse_phi_rad2",
    "bound_d_m2",
    "bound_phi_rad2",
    "n_trials",
    "seed",
]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if not watts > 0.0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class Scenario:
    """One validated experiment setting.

    ``ue_box`` is ((d_lo, d_hi) meters, (phi_lo, phi_hi) radians) and
    must sit inside the focusing region: distances between twice the
    aperture and one eighth of the Rayleigh distance. The prior's
    support must coincide with the distance range so bound averaging,
    trial draws, and training labels all live on the same box.
    ``sensors`` fixes one concrete sensor set; leave it None to have
    sweeps sample sets from the configured ranges.
    """

    geom: ArrayGeometry
    ue_box: tuple[tuple[float, float], tuple[float, float]]
    prior: BetaPrior
    p_t_watts: float
    sigma2_watts: float
    n_snapshots: int
    seed: int = 0
    sensor_range_m: tuple[float, float] = (100.0, 150.0)
    sensor_azimuth_rad: tuple[float, float] = (0.0, math.pi)
    sensors: SensorSet | None = None

    def __post_init__(self) -> None:
        (d_lo, d_hi), (p_lo, p_hi) = self.ue_box
        object.__setattr__(self, "ue_box",
                           ((float(d_lo), float(d_hi)),
                            (float(p_lo), float(p_hi))))
        object.__setattr__(self, "sensor_range_m",
                           tuple(float(v) for v in self.sensor_range_m))
        object.__setattr__(self, "sensor_azimuth_rad",
                           tuple(float(v) for v in self.sensor_azimuth_rad))

        near = self.geom.focusing_near_edge_m
        far = self.geom.rayleigh_distance_m / 8.0
        if not near <= d_lo < d_hi <= far:
            raise ValueError(
                f"focal distance range [{d_lo}, {d_hi}] must lie inside "
                f"the focusing region [{near:.3f}, {far:.3f}] m")
        if not 0.0 < p_lo < p_hi < math.pi:
            raise ValueError("focal azimuth range must be ordered strictly "
                             "inside (0, pi)")
        if not (self.prior.d_min_m == d_lo and self.prior.d_max_m == d_hi):
            raise ValueError("prior support must equal the focal distance "
                             "range so draws and bounds share one box")
        if not (self.p_t_watts > 0.0 and math.isfinite(self.p_t_watts)):
            raise ValueError("transmit power must be positive and finite")
        if not (self.sigma2_watts > 0.0 and math.isfinite(self.sigma2_watts)):
            raise ValueError("noise power must be positive and finite")
        if self.n_snapshots < 1:
            raise ValueError("need at least one snapshot")

        r_lo, r_hi = self.sensor_range_m
        d_f = self.geom.rayleigh_distance_m
        if not r_lo < r_hi:
            raise ValueError("sensor range must be ordered")
        if r_lo < d_f:
            raise ValueError(
                f"sensor range starts at {r_lo} m, inside the far-field "
                f"boundary {d_f:.3f} m")
        a_lo, a_hi = self.sensor_azimuth_rad
        if not 0.0 <= a_lo < a_hi <= math.pi:
            raise ValueError("sensor azimuth range must be ordered within "
                             "[0, pi]")
        if self.sensors is not None:
            s = self.sensors
            if len(s) < 1:
                raise ValueError("a fixed sensor set must be nonempty")
            if (float(s.ranges_m.min()) < r_lo
                    or float(s.ranges_m.max()) > r_hi
                    or float(s.azimuths_rad.min()) < a_lo
                    or float(s.azimuths_rad.max()) > a_hi):
                raise ValueError("fixed sensors must lie inside the "
                                 "configured range and azimuth intervals")

    @property
    def d_range_m(self) -> tuple[float, float]:
        return self.ue_box[0]

    @property
    def phi_range_rad(self) -> tuple[float, float]:
        return self.ue_box[1]


def sample_sensor_set(scenario: Scenario, k: int,
                      seed: int | np.random.SeedSequence) -> SensorSet:
    """K sensors with ranges and azimuths uniform over the scenario's
    intervals; deterministic per seed."""
    if k < 1:
        raise ValueError("need at least one sensor")
    rng = np.random.default_rng(seed)
    r_lo, r_hi = scenario.sensor_range_m
    a_lo, a_hi = scenario.sensor_azimuth_rad
    return SensorSet(rng.uniform(r_lo, r_hi, size=k),
                     rng.uniform(a_lo, a_hi, size=k))


@dataclass(frozen=True)
class SweepRow:
    """One aggregated cell of a sweep.

    Bound columns are present on every row; MSE columns are None on
    bound-only rows. ``n_trials`` counts whatever was averaged:
    estimation trials for estimator rows, geometry realizations for
    bound-only rows.
    """

    k_sensors: int
    n_snapshots: int
    sigma2_dbm: float
    method: str
    mse_d_m2: float | None
    mse_phi_rad2: float | None
    bound_d_m2: float
    bound_phi_rad2: float
    n_trials: int
    seed: int

    def __post_init__(self) -> None:
        if self.k_sensors < 1 or self.n_snapshots < 1:
            raise ValueError("sensor and snapshot counts must be positive")
        if self.n_trials < 1:
            raise ValueError("a row must aggregate at least one trial")
        for v in (self.mse_d_m2, self.mse_phi_rad2):
            if v is not None and not v >= 0.0:
                raise ValueError("mean squared errors cannot be negative")
        if not (self.bound_d_m2 > 0.0 and self.bound_phi_rad2 > 0.0):
            raise ValueError("bounds must be positive")

    def sort_key(self) -> tuple:
        return (self.k_sensors, self.n_snapshots, self.sigma2_dbm,
                self.method)


@dataclass(frozen=True)
class SweepResult:
    """Sorted sweep rows plus the resolved metadata for the sidecar."""

    rows: tuple[SweepRow, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows",
                           tuple(sorted(self.rows, key=SweepRow.sort_key)))


@dataclass(frozen=True)
class DeepSetsProfile:
    """Training budget for the set regressor inside an MSE sweep."""

    width: int = 64
    n_train: int = 5000
    n_val: int = 2000
    two_heads: bool = True
    train_config: TrainConfig = TrainConfig(max_epochs=150, patience=12)

    def __post_init__(self) -> None:
        if self.width < 4:
            raise ValueError("width must be at least 4")
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("training and validation sizes must be positive")


# -- resolved-config serialization -----------------------------------------

def scenario_to_config(scenario: Scenario) -> dict:
    """Scenario as a plain config mapping.

    Carries both the human-facing dBm/GHz values and the authoritative
    SI floats; :func:`scenario_from_config` prefers the SI keys, so a
    round trip through JSON or TOML is bitwise.
    """
    geom = scenario.geom
    cfg: dict = {
        "n_elements": geom.n_elements,
        "spacing_m": geom.spacing_m,
        "wavelength_m": geom.wavelength_m,
        "carrier_ghz": SPEED_OF_LIGHT_M_S / geom.wavelength_m / 1e9,
        "ue_d_range_m": list(scenario.d_range_m),
        "ue_phi_range_rad": list(scenario.phi_range_rad),
        "p_t_watts": scenario.p_t_watts,
        "p_t_dbm": watts_to_dbm(scenario.p_t_watts),
        "sigma2_watts": scenario.sigma2_watts,
        "sigma2_dbm": watts_to_dbm(scenario.sigma2_watts),
        "snapshots": scenario.n_snapshots,
        "prior_alpha": scenario.prior.alpha,
        "prior_beta": scenario.prior.beta,
        "sensor_range_m": list(scenario.sensor_range_m),
        "sensor_azimuth_range_rad": list(scenario.sensor_azimuth_rad),
        "seed": scenario.seed,
    }
    if scenario.sensors is not None:
        cfg["sensors"] = {
            "ranges_m": [float(v) for v in scenario.sensors.ranges_m],
            "azimuths_rad": [float(v) for v in scenario.sensors.azimuths_rad],
        }
    return cfg


def scenario_from_config(cfg: Mapping) -> Scenario:
    """Build and validate a Scenario from a config mapping.

    Accepts either the table itself or a mapping with a ``scenario``
    entry. Power may come as ``p_t_watts`` or ``p_t_dbm`` (watts wins
    when both appear), noise likewise; the carrier may come as
    ``wavelength_m`` or ``carrier_ghz``; spacing defaults to half the
    wavelength.
    """
    if "scenario" in cfg and isinstance(cfg["scenario"], Mapping):
        cfg = cfg["scenario"]

    def need(key: str):
        if key not in cfg:
            raise ValueError(f"config is missing required key '{key}'")
        return cfg[key]

    if "wavelength_m" in cfg:
        wavelength = float(cfg["wavelength_m"])
    else:
        wavelength = SPEED_OF_LIGHT_M_S / (float(need("carrier_ghz")) * 1e9)
    spacing = float(cfg.get("spacing_m", wavelength / 2.0))
    geom = ArrayGeometry(int(need("n_elements")), spacing, wavelength)

    if "p_t_watts" in cfg:
        p_t = float(cfg["p_t_watts"])
    else:
        p_t = dbm_to_watts(float(need("p_t_dbm")))
    if "sigma2_watts" in cfg:
        sigma2 = float(cfg["sigma2_watts"])
    else:
        sigma2 = dbm_to_watts(float(need("sigma2_dbm")))

    d_range = tuple(float(v) for v in need("ue_d_range_m"))
    phi_range = tuple(float(v) for v in need("ue_phi_range_rad"))
    if len(d_range) != 2 or len(phi_range) != 2:
        raise ValueError("focal ranges must be [low, high] pairs")
    prior = BetaPrior(float(cfg.get("prior_alpha", 2.0)),
                      float(cfg.get("prior_beta", 2.0)),
                      d_range[0], d_range[1])

    sensors = None
    if "sensors" in cfg:
        stab = cfg["sensors"]
        sensors = SensorSet(np.asarray(stab["ranges_m"], dtype=np.float64),
                            np.asarray(stab["azimuths_rad"], dtype=np.float64))

    return Scenario(
        geom=geom,
        ue_box=(d_range, phi_range),
        prior=prior,
        p_t_watts=p_t,
        sigma2_watts=sigma2,
        n_snapshots=int(need("snapshots")),
        seed=int(cfg.get("seed", 0)),
        sensor_range_m=tuple(float(v)
                             for v in cfg.get("sensor_range_m", (100.0, 150.0))),
        sensor_azimuth_rad=tuple(
            float(v) for v in cfg.get("sensor_azimuth_range_rad",
                                      (0.0, math.pi))),
        sensors=sensors,
    )


# -- shared gradient cache --------------------------------------------------

@dataclass
class _PriorGradients:
    """Leakage gains and gradients at prior draws for one sensor set.

    Everything a bound needs for any (K, L, sigma2) cell: slicing the
    sensor axis gives the nested-subset bound, and the (snapshots,
    noise) dependence enters only through cheap scalar maps.
    """

    gains: np.ndarray   # (draws, k_max)
    grads: np.ndarray   # (draws, k_max, 2)
    beta: np.ndarray    # (k_max,)


def _prior_gradients(scenario: Scenario, sensors: SensorSet,
                     rng: np.random.Generator, n_prior_samples: int,
                     backend: LeakageBackend,
                     n_images: int) -> _PriorGradients:
    p_lo, p_hi = scenario.phi_range_rad
    distances = scenario.prior.sample(rng, n_prior_samples)
    azimuths = rng.uniform(p_lo, p_hi, size=n_prior_samples)
    k = len(sensors)
    gains = np.empty((n_prior_samples, k))
    grads = np.empty((n_prior_samples, k, 2))
    for j in range(n_prior_samples):
        psi = UeLocation(float(distances[j]), float(azimuths[j]))
        g, dg = gains_with_gradients(backend, scenario.geom, psi,
                                     sensors.azimuths_rad, n_images)
        gains[j] = g
        grads[j] = dg
    beta = np.atleast_1d(pathloss(sensors.ranges_m, scenario.geom.wavelength_m))
    return _PriorGradients(gains, grads, beta)


def _bound_from_gradients(pg: _PriorGradients, scenario: Scenario, k: int,
                          n_snapshots: int, sigma2_watts: float,
                          n_prior_samples: int):
    fims = fim_terms(pg.gains[:, :k], pg.grads[:, :k, :], pg.beta[:k],
                     scenario.p_t_watts, sigma2_watts, n_snapshots)
    return bcrlb_from_mean_fim(fims.mean(axis=0), scenario.prior,
                               n_prior_samples)


def _clean_grid(values: Sequence, kind: str, as_int: bool) -> list:
    if len(values) == 0:
        raise ValueError(f"{kind} grid must be nonempty")
    if as_int:
        out = sorted({int(v) for v in values})
        if out[0] < 1:
            raise ValueError(f"{kind} values must be positive")
    else:
        out = sorted({float(v) for v in values})
    return out


def _full_sensor_set(scenario: Scenario, k_max: int,
                     seed_seq: np.random.SeedSequence) -> SensorSet:
    if scenario.sensors is not None:
        if len(scenario.sensors) < k_max:
            raise ValueError(
                f"fixed sensor set has {len(scenario.sensors)} sensors, "
                f"sweep needs {k_max}")
        return scenario.sensors.permuted(np.arange(k_max))
    return sample_sensor_set(scenario, k_max, seed_seq)


# -- sweep drivers ----------------------------------------------------------

def run_bcrlb_sweep(
    scenario: Scenario,
    k_grid: Sequence[int],
    l_grid: Sequence[int],
    sigma2_dbm_grid: Sequence[float],
    n_geometries: int = 100,
    n_prior_samples: int = 256,
    backend: LeakageBackend = LeakageBackend.FRESNEL,
    n_images: int = DEFAULT_N_IMAGES,
    seed: int | None = None,
) -> SweepResult:
    """Location bound averaged over sensor geometries, on a full grid.

    Each geometry realization samples sensors once at the largest
    requested count and evaluates one leakage-gradient pass over the
    prior draws; every (K, L, sigma2) cell then reuses those gradients,
    with the K axis sliced as nested subsets. Per geometry the bound is
    therefore exactly nonincreasing in K and L, and the reported
    average inherits that. Rows carry the mean bound over geometries;
    ``n_trials`` records the geometry count.
    """
    ks = _clean_grid(k_grid, "sensor-count", as_int=True)
    ls = _clean_grid(l_grid, "snapshot", as_int=True)
    sigmas = _clean_grid(sigma2_dbm_grid, "noise", as_int=False)
    if n_geometries < 1:
        raise ValueError("need at least one geometry realization")
    if n_prior_samples < 1:
        raise ValueError("need at least one prior draw")

    master = scenario.seed if seed is None else int(seed)
    root = np.random.SeedSequence(master)
    k_max = ks[-1]
    cells = list(itertools.product(ks, ls, sigmas))
    sums = {cell: np.zeros(2) for cell in cells}

    for geo_ss in root.spawn(n_geometries):
        sensor_ss, prior_ss = geo_ss.spawn(2)
        sensors = _full_sensor_set(scenario, k_max, sensor_ss)
        pg = _prior_gradients(scenario, sensors, np.random.default_rng(prior_ss),
                              n_prior_samples, backend, n_images)
        for cell in cells:
            k, l, s_dbm = cell
            res = _bound_from_gradients(pg, scenario, k, l,
                                        dbm_to_watts(s_dbm), n_prior_samples)
            sums[cell] += (res.bound_d_m2, res.bound_phi_rad2)

    rows = [
        SweepRow(k, l, s_dbm, "bcrlb", None, None,
                 float(sums[(k, l, s_dbm)][0] / n_geometries),
                 float(sums[(k, l, s_dbm)][1] / n_geometries),
                 n_geometries, master)
        for (k, l, s_dbm) in cells
    ]
    meta = {
        "format": _SWEEP_FORMAT,
        "tool": "bcrlb",
        "version": __version__,
        "scenario": scenario_to_config(scenario),
        "k_grid": ks,
        "l_grid": ls,
        "sigma2_dbm_grid": sigmas,
        "n_geometries": n_geometries,
        "n_prior_samples": n_prior_samples,
        "backend": backend.name.lower(),
        "seed": master,
    }
    return SweepResult(tuple(rows), meta)


def run_mse_sweep(
    scenario: Scenario,
    k_grid: Sequence[int],
    l_grid: Sequence[int],
    sigma2_dbm_grid: Sequence[float],
    methods: Sequence[str] = ("grid_search",),
    n_trials: int = 200,
    n_sensor_sets: int = 5,
    grid: GridSpec | None = None,
    n_prior_samples: int = 256,
    profile: DeepSetsProfile | None = None,
    backend: LeakageBackend = LeakageBackend.EXACT,
    bound_backend: LeakageBackend = LeakageBackend.FRESNEL,
    n_images: int = DEFAULT_N_IMAGES,
    seed: int | None = None,
) -> SweepResult:
    """Estimator error against the matching bound, on a full grid.

    Per sensor-set replication: sample one geometry at the largest
    sensor count, compute the bound via the shared gradient pass, and
    for every (K, L, sigma2) cell draw fresh focal points from the
    prior, simulate observation blocks, and run each requested method
    on the identical measurements. The set regressor is trained per
    replication and cell on its own dataset (budget set by
    ``profile``); a diverged training skips that replication's cell
    rather than aborting the sweep, and the skip count lands in the
    metadata. MSE pools squared errors over replications and trials;
    bounds average over replications, so each row is a paired
    (estimator, bound) measurement at one cell.
    """
    ks = _clean_grid(k_grid, "sensor-count", as_int=True)
    ls = _clean_grid(l_grid, "snapshot", as_int=True)
    sigmas = _clean_grid(sigma2_dbm_grid, "noise", as_int=False)
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise ValueError("need at least one method")
    known = {"grid_search", "deepsets"}
    unknown = set(methods) - known
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if n_sensor_sets < 1:
        raise ValueError("need at least one sensor-set replication")
    if grid is None:
        grid = GridSpec(scenario.d_range_m, scenario.phi_range_rad)
    if profile is None:
        profile = DeepSetsProfile()

    master = scenario.seed if seed is None else int(seed)
    root = np.random.SeedSequence(master)
    k_max = ks[-1]
    cells = list(itertools.product(ks, ls, sigmas))
    sq_sums = {(c, m): np.zeros(2) for c in cells for m in methods}
    counts = {(c, m): 0 for c in cells for m in methods}
    bound_sums = {c: np.zeros(2) for c in cells}
    diverged = 0
    p_lo, p_hi = scenario.phi_range_rad

    for rep_ss in root.spawn(n_sensor_sets):
        sensor_ss, prior_ss, trial_ss, train_ss = rep_ss.spawn(4)
        sensors_full = _full_sensor_set(scenario, k_max, sensor_ss)
        pg = _prior_gradients(scenario, sensors_full,
                              np.random.default_rng(prior_ss),
                              n_prior_samples, bound_backend, n_images)
        # unit-noise model matrices per sensor count; each cell rescales
        base_models = {
            k: model_matrix(scenario.geom,
                            sensors_full.permuted(np.arange(k)), grid,
                            scenario.p_t_watts, 1.0, backend, n_images)
            for k in ks
        } if "grid_search" in methods else {}

        cell_trial_ss = trial_ss.spawn(len(cells))
        cell_train_ss = train_ss.spawn(len(cells))
        for cell, c_trial, c_train in zip(cells, cell_trial_ss,
                                          cell_train_ss):
            k, l, s_dbm = cell
            sigma2 = dbm_to_watts(s_dbm)
            sensors_k = sensors_full.permuted(np.arange(k))
            res = _bound_from_gradients(pg, scenario, k, l, sigma2,
                                        n_prior_samples)
            bound_sums[cell] += (res.bound_d_m2, res.bound_phi_rad2)

            net = None
            if "deepsets" in methods:
                cell_scn = replace(scenario, sensors=sensors_k,
                                   sigma2_watts=sigma2, n_snapshots=l)
                ds_seed, tc_seed = (int(v) for v in
                                    c_train.generate_state(2, dtype=np.uint64))
                tr, va, _ = make_dataset(cell_scn, profile.n_train,
                                         profile.n_val, 0, seed=ds_seed)
                tc = replace(profile.train_config, seed=tc_seed)
                try:
                    net, _ = train(tr, va, tc, width=profile.width,
                                   two_heads=profile.two_heads,
                                   d_box=scenario.d_range_m,
                                   phi_box=scenario.phi_range_rad)
                except TrainingDiverged:
                    diverged += 1

            psi_ss, block_ss = c_trial.spawn(2)
            rng_psi = np.random.default_rng(psi_ss)
            d_true = scenario.prior.sample(rng_psi, n_trials)
            phi_true = rng_psi.uniform(p_lo, p_hi, size=n_trials)
            block_seeds = block_ss.generate_state(n_trials, dtype=np.uint64)
            noise = NoiseModel(sigma2)
            model = base_models[k] / sigma2 if "grid_search" in methods else None

            feats = np.empty((k, 3))
            feats[:, 1] = sensors_k.ranges_m
            feats[:, 2] = sensors_k.azimuths_rad
            for t in range(n_trials):
                psi = UeLocation(float(d_true[t]), float(phi_true[t]))
                pattern = leakage_pattern(backend, scenario.geom, psi,
                                          sensors_k, scenario.p_t_watts,
                                          n_images)
                block = sample_block(pattern, noise, l,
                                     seed=int(block_seeds[t]))
                z = block.mean_normalized
                if "grid_search" in methods:
                    est = grid_search(z, grid, scenario.geom, sensors_k,
                                      scenario.p_t_watts, sigma2, backend,
                                      n_images, model=model)
                    err = (est.psi_hat.distance_m - psi.distance_m,
                           est.psi_hat.azimuth_rad - psi.azimuth_rad)
                    sq_sums[(cell, "grid_search")] += np.square(err)
                    counts[(cell, "grid_search")] += 1
                if net is not None:
                    e = feats.copy()
                    e[:, 0] = z
                    hat = forward(net, e)
                    err = (hat.distance_m - psi.distance_m,
                           hat.azimuth_rad - psi.azimuth_rad)
                    sq_sums[(cell, "deepsets")] += np.square(err)
                    counts[(cell, "deepsets")] += 1

    rows = []
    for cell in cells:
        k, l, s_dbm = cell
        bound_d, bound_phi = bound_sums[cell] / n_sensor_sets
        for m in methods:
            n = counts[(cell, m)]
            if n == 0:
                continue
            mse = sq_sums[(cell, m)] / n
            rows.append(SweepRow(k, l, s_dbm, m, float(mse[0]), float(mse[1]),
                                 float(bound_d), float(bound_phi), n, master))
    meta = {
        "format": _SWEEP_FORMAT,
        "tool": "evaluate",
        "version": __version__,
        "scenario": scenario_to_config(scenario),
        "k_grid": ks,
        "l_grid": ls,
        "sigma2_dbm_grid": sigmas,
        "methods": methods,
        "n_trials_per_replication": n_trials,
        "n_sensor_sets": n_sensor_sets,
        "n_prior_samples": n_prior_samples,
        "grid": {
            "d_range_m": list(grid.d_range_m),
            "phi_range_rad": list(grid.phi_range_rad),
            "n_d": grid.n_d,
            "n_phi": grid.n_phi,
        },
        "backend": backend.name.lower(),
        "bound_backend": bound_backend.name.lower(),
        "trainings_diverged": diverged,
        "seed": master,
    }
    if "deepsets" in methods:
        meta["deepsets_profile"] = {
            "width": profile.width,
            "n_train": profile.n_train,
            "n_val": profile.n_val,
            "two_heads": profile.two_heads,
            "max_epochs": profile.train_config.max_epochs,
            "patience": profile.train_config.patience,
            "batch_size": profile.train_config.batch_size,
            "learning_rate": profile.train_config.learning_rate,
        }
    return SweepResult(tuple(rows), meta)


# -- files ------------------------------------------------------------------

def sidecar_path(path: str | Path) -> Path:
    """The JSON metadata file that travels with a CSV output."""
    return Path(path).with_suffix(".json")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        # plain-float repr: numpy scalars would otherwise print their type
        return repr(float(value))
    return str(value)


def write_sweep(path: str | Path, result: SweepResult) -> tuple[Path, Path]:
    """Sweep rows as CSV plus the sidecar; both written atomically.

    Floats are serialized with ``repr`` so reading the file back
    reproduces every value bitwise.
    """
    csv_path = Path(path)
    if csv_path.suffix != ".csv":
        csv_path = csv_path.with_suffix(csv_path.suffix + ".csv")
    buf = io.StringIO()
    buf.write(",".join(_SWEEP_HEADER) + "\n")
    for row in result.rows:
        buf.write(",".join(_fmt(v) for v in (
            row.k_sensors, row.n_snapshots, row.sigma2_dbm, row.method,
            row.mse_d_m2, row.mse_phi_rad2, row.bound_d_m2,
            row.bound_phi_rad2, row.n_trials, row.seed)) + "\n")
    _atomic_write_text(csv_path, buf.getvalue())
    side = sidecar_path(csv_path)
    _atomic_write_text(side, json.dumps(result.meta, indent=2, sort_keys=True)
                       + "\n")
    return csv_path, side


def read_sweep(path: str | Path) -> SweepResult:
    csv_path = Path(path)
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != _SWEEP_HEADER:
        raise ValueError(f"{csv_path} is not a sweep CSV")
    rows = []
    for line in lines[1:]:
        f = line.split(",")
        rows.append(SweepRow(
            int(f[0]), int(f[1]), float(f[2]), f[3],
            float(f[4]) if f[4] else None,
            float(f[5]) if f[5] else None,
            float(f[6]), float(f[7]), int(f[8]), int(f[9])))
    side = sidecar_path(csv_path)
    meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    return SweepResult(tuple(rows), meta)


def write_dataset(path: str | Path, splits: Mapping[str, Sequence[SetSample]],
                  sensors: SensorSet,
                  meta: Mapping | None = None) -> tuple[Path, Path]:
    """Labeled observation sets as CSV rows plus a JSON sidecar.

    Columns are (split, sample, sensor, z, d_true_m, phi_true_rad):
    the per-sensor layout of the observation export, with the snapshot
    axis already averaged and the label attached to every row. The
    sidecar carries the sensor coordinates, the split sizes, and any
    caller metadata; the reader needs it to rebuild the sets.
    """
    csv_path = Path(path)
    if csv_path.suffix != ".csv":
        csv_path = csv_path.with_suffix(csv_path.suffix + ".csv")
    buf = io.StringIO()
    buf.write("split,sample,sensor,z,d_true_m,phi_true_rad\n")
    for name, samples in splits.items():
        for i, s in enumerate(samples):
            if (not np.array_equal(s.elements[:, 1], sensors.ranges_m)
                    or not np.array_equal(s.elements[:, 2],
                                          sensors.azimuths_rad)):
                raise ValueError(
                    f"sample {i} of split '{name}' was built against a "
                    "different sensor set")
            for j in range(s.elements.shape[0]):
                buf.write(f"{name},{i},{j},{float(s.elements[j, 0])!r},"
                          f"{float(s.label.distance_m)!r},"
                          f"{float(s.label.azimuth_rad)!r}\n")
    _atomic_write_text(csv_path, buf.getvalue())

    side = sidecar_path(csv_path)
    doc = {
        "format": _DATASET_FORMAT,
        "version": _DATASET_VERSION,
        "sensors": {
            "ranges_m": [float(v) for v in sensors.ranges_m],
            "azimuths_rad": [float(v) for v in sensors.azimuths_rad],
        },
        "splits": {name: len(samples) for name, samples in splits.items()},
    }
    if meta:
        doc["meta"] = dict(meta)
    _atomic_write_text(side, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, side


def read_dataset(path: str | Path
                 ) -> tuple[dict[str, list[SetSample]], SensorSet, dict]:
    """Rebuild dataset splits from a CSV written by :func:`write_dataset`."""
    csv_path = Path(path)
    side = sidecar_path(csv_path)
    doc = json.loads(side.read_text(encoding="utf-8"))
    if doc.get("format") != _DATASET_FORMAT:
        raise ValueError(f"{side} is not a dataset sidecar")
    if int(doc.get("version", -1)) != _DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {doc.get('version')}")
    sensors = SensorSet(np.asarray(doc["sensors"]["ranges_m"], dtype=np.float64),
                        np.asarray(doc["sensors"]["azimuths_rad"],
                                   dtype=np.float64))
    k = len(sensors)

    lines = csv_path.read_text(encoding="utf-8").splitlines()
    expected = "split,sample,sensor,z,d_true_m,phi_true_rad"
    if not lines or lines[0] != expected:
        raise ValueError(f"{csv_path} is not a dataset CSV")
    # rows arrive grouped by (split, sample) with sensors in order
    splits: dict[str, list[SetSample]] = {name: [] for name in doc["splits"]}
    pending_z: list[float] = []
    pending_key: tuple[str, int] | None = None
    pending_label: tuple[float, float] | None = None

    def flush() -> None:
        if pending_key is None:
            return
        if len(pending_z) != k:
            raise ValueError(
                f"sample {pending_key} has {len(pending_z)} sensor rows, "
                f"expected {k}")
        e = np.empty((k, 3))
        e[:, 0] = pending_z
        e[:, 1] = sensors.ranges_m
        e[:, 2] = sensors.azimuths_rad
        splits[pending_key[0]].append(
            SetSample(e, UeLocation(*pending_label)))

    for line in lines[1:]:
        name, sample, sensor, z, d_true, phi_true = line.split(",")
        key = (name, int(sample))
        if key != pending_key:
            flush()
            pending_key = key
            pending_label = (float(d_true), float(phi_true))
            pending_z = []
        if int(sensor) != len(pending_z):
            raise ValueError(f"sensor rows of sample {key} are out of order")
        pending_z.append(float(z))
    flush()

    for name, count in doc["splits"].items():
        if len(splits[name]) != count:
            raise ValueError(
                f"split '{name}' has {len(splits[name])} samples, sidecar "
                f"says {count}")
    return splits, sensors, doc.get("meta", {})
