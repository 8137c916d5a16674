"""Model-based grid search for the focal point from mean sensor powers.

Each sensor's mean normalized power is a known deterministic function of
the focal point, so the estimator predicts that pattern on a dense
lattice of candidate points and picks the candidate closest to the
measurement in squared error. No initialization, no iteration.

The lattice model matrix depends on geometry and powers but not on the
measured data, so sweeps compute it once per sensor set and reuse it
across every trial; ``grid_search`` accepts the precomputed matrix for
exactly that reason. Noise level enters the model only as the overall
1/sigma2 scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import ArrayGeometry, SensorSet, UeLocation, pathloss
from .leakage import DEFAULT_N_IMAGES, LeakageBackend, gain_matrix, leakage_pattern

__all__ = [
    "GridSpec",
    "EstimateResult",
    "TrialRecord",
    "model_vector",
    "model_matrix",
    "grid_search",
    "write_trials_csv",
    "read_trials_csv",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform search lattice over candidate focal points.

    Both axes include their endpoints, so cell sizes are range over
    count minus one. Azimuths must stay inside (0, pi), the open
    interval where a focal point is defined.
    """

    d_range_m: tuple[float, float]
    phi_range_rad: tuple[float, float]
    n_d: int = 100
    n_phi: int = 180

    def __post_init__(self) -> None:
        if self.n_d < 2 or self.n_phi < 2:
            raise ValueError("need at least two samples per axis")
        d_lo, d_hi = self.d_range_m
        p_lo, p_hi = self.phi_range_rad
        if not 0.0 < d_lo < d_hi:
            raise ValueError("distance range must be positive and increasing")
        if not 0.0 < p_lo < p_hi < np.pi:
            raise ValueError("azimuth range must be increasing within (0, pi)")

    @property
    def distance_axis_m(self) -> np.ndarray:
        return np.linspace(self.d_range_m[0], self.d_range_m[1], self.n_d)

    @property
    def azimuth_axis_rad(self) -> np.ndarray:
        return np.linspace(self.phi_range_rad[0], self.phi_range_rad[1], self.n_phi)

    @property
    def cell_d_m(self) -> float:
        return (self.d_range_m[1] - self.d_range_m[0]) / (self.n_d - 1)

    @property
    def cell_phi_rad(self) -> float:
        return (self.phi_range_rad[1] - self.phi_range_rad[0]) / (self.n_phi - 1)

    def location_at(self, i: int, j: int) -> UeLocation:
        return UeLocation(float(self.distance_axis_m[i]),
                          float(self.azimuth_axis_rad[j]))

    def nearest_index(self, psi: UeLocation) -> tuple[int, int]:
        """Lattice indices of the point closest to ``psi``, clipped inside."""
        i = round((psi.distance_m - self.d_range_m[0]) / self.cell_d_m)
        j = round((psi.azimuth_rad - self.phi_range_rad[0]) / self.cell_phi_rad)
        return (int(np.clip(i, 0, self.n_d - 1)),
                int(np.clip(j, 0, self.n_phi - 1)))


@dataclass(frozen=True)
class EstimateResult:
    """Lattice minimizer, its residual sum of squares, and its indices."""

    psi_hat: UeLocation
    objective: float
    grid_index: tuple[int, int]

    def __post_init__(self) -> None:
        if not self.objective >= 0.0:
            raise ValueError("objective must be nonnegative")


@dataclass(frozen=True)
class TrialRecord:
    """One Monte Carlo trial: the truth and what the estimator returned."""

    trial: int
    d_true_m: float
    phi_true_rad: float
    d_hat_m: float
    phi_hat_rad: float
    objective: float

    @classmethod
    def from_estimate(cls, trial: int, truth: UeLocation,
                      est: EstimateResult) -> "TrialRecord":
        return cls(trial, truth.distance_m, truth.azimuth_rad,
                   est.psi_hat.distance_m, est.psi_hat.azimuth_rad,
                   est.objective)


def model_vector(
    geom: ArrayGeometry,
    sensors: SensorSet,
    psi: UeLocation,
    p_t_watts: float,
    sigma2_watts: float,
    backend: LeakageBackend = LeakageBackend.EXACT,
    n_images: int = DEFAULT_N_IMAGES,
) -> np.ndarray:
    """Expected mean-normalized power at each sensor for a candidate point."""
    if not sigma2_watts > 0.0:
        raise ValueError("noise variance must be positive")
    pattern = leakage_pattern(backend, geom, psi, sensors, p_t_watts, n_images)
    return pattern.mean_powers / sigma2_watts


def model_matrix(
    geom: ArrayGeometry,
    sensors: SensorSet,
    grid: GridSpec,
    p_t_watts: float,
    sigma2_watts: float,
    backend: LeakageBackend = LeakageBackend.EXACT,
    n_images: int = DEFAULT_N_IMAGES,
) -> np.ndarray:
    """Model vectors at every lattice point, shape (n_d, n_phi, K).

    This is the expensive, data-independent half of the grid search.
    """
    if not sigma2_watts > 0.0:
        raise ValueError("noise variance must be positive")
    if not p_t_watts > 0.0:
        raise ValueError("transmit power must be positive")
    if len(sensors) == 0:
        raise ValueError("need at least one sensor")
    sensors.assert_far_field(geom)
    d_mesh, az_mesh = np.meshgrid(grid.distance_axis_m, grid.azimuth_axis_rad,
                                  indexing="ij")
    g = gain_matrix(backend, geom, sensors.azimuths_rad, d_mesh.ravel(),
                    az_mesh.ravel(), n_images)
    beta = np.atleast_1d(pathloss(sensors.ranges_m, geom.wavelength_m))
    scaled = (p_t_watts / sigma2_watts) * beta[:, None] * g
    return np.ascontiguousarray(scaled.T.reshape(grid.n_d, grid.n_phi,
                                                 len(sensors)))


def grid_search(
    z: np.ndarray,
    grid: GridSpec,
    geom: ArrayGeometry,
    sensors: SensorSet,
    p_t_watts: float,
    sigma2_watts: float,
    backend: LeakageBackend = LeakageBackend.EXACT,
    n_images: int = DEFAULT_N_IMAGES,
    model: np.ndarray | None = None,
) -> EstimateResult:
    """Least-squares focal point estimate over the lattice.

    ``z`` holds one mean-normalized power per sensor. Ties go to the
    smallest (distance index, then azimuth index), which is exactly the
    order a row-major argmin scans, so the reduction is deterministic
    no matter how the objective was computed. Pass ``model`` to reuse a
    precomputed ``model_matrix``.
    """
    za = np.asarray(z, dtype=np.float64)
    if za.ndim != 1 or za.size != len(sensors) or za.size == 0:
        raise ValueError("measurement must be one value per sensor")
    if not np.all(np.isfinite(za)):
        raise ValueError("measurement must be finite")
    if model is None:
        model = model_matrix(geom, sensors, grid, p_t_watts, sigma2_watts,
                             backend, n_images)
    elif model.shape != (grid.n_d, grid.n_phi, za.size):
        raise ValueError("model matrix does not match grid and sensor count")
    objective = np.square(model - za).sum(axis=-1)
    flat = int(np.argmin(objective))
    i, j = divmod(flat, grid.n_phi)
    return EstimateResult(grid.location_at(i, j), float(objective[i, j]), (i, j))


def write_trials_csv(path: str | Path, records: Iterable[TrialRecord]) -> None:
    """Write per-trial results with a fixed header, one row per trial."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "d_true", "phi_true", "d_hat", "phi_hat",
                         "objective"])
        for r in records:
            writer.writerow([r.trial, repr(r.d_true_m), repr(r.phi_true_rad),
                             repr(r.d_hat_m), repr(r.phi_hat_rad),
                             repr(r.objective)])


def read_trials_csv(path: str | Path) -> Iterator[TrialRecord]:
    """Yield the records written by ``write_trials_csv``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            yield TrialRecord(int(row["trial"]), float(row["d_true"]),
                              float(row["phi_true"]), float(row["d_hat"]),
                              float(row["phi_hat"]), float(row["objective"]))
