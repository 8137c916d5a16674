"""Shared oracle-side fixtures for the statistical test modules.

Everything here is reference code the tests compare the package
against; nothing in the package imports it. The Monte Carlo score
covariance deliberately draws its samples from numpy's noncentral
chi-square generator rather than the package's own block sampler, so
the two routes share no sampling code.
"""

from __future__ import annotations

import math

import numpy as np

from leakloc.geometry import ArrayGeometry, SensorSet, UeLocation, pathloss
from leakloc.leakage import LeakageBackend, gains_with_gradients
from leakloc.observation import NoncentralChiSq2, noncentrality, score

SPEED_OF_LIGHT_M_S = 299_792_458.0
CARRIER_HZ = 15e9
LAMBDA_TAB = SPEED_OF_LIGHT_M_S / CARRIER_HZ


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


P_T_TAB = dbm_to_watts(23.0)


def table_geometry() -> ArrayGeometry:
    """The 100-element half-wavelength array used throughout the suite."""
    return ArrayGeometry(100, LAMBDA_TAB / 2.0, LAMBDA_TAB)


def sample_sensors(
    rng: np.random.Generator,
    k: int,
    r_lo: float = 100.0,
    r_hi: float = 150.0,
    az_lo: float = 0.0,
    az_hi: float = math.pi,
) -> SensorSet:
    """Random sensor set, ranges and azimuths uniform in their intervals."""
    return SensorSet(rng.uniform(r_lo, r_hi, size=k),
                     rng.uniform(az_lo, az_hi, size=k))


def mc_score_covariance(
    geom: ArrayGeometry,
    ue: UeLocation,
    sensors: SensorSet,
    p_t_watts: float,
    sigma2_watts: float,
    n_snapshots: int,
    n_trials: int,
    seed: int,
    backend: LeakageBackend = LeakageBackend.EXACT,
) -> np.ndarray:
    """Monte Carlo estimate of the per-block location score covariance.

    Independent route to the conditional information matrix: draw
    normalized power samples from the noncentral chi-square law, chain
    each per-sample score through d(noncentrality)/d(location), sum
    within a block, and return the 2x2 sample covariance across trials.
    Chunked over trials to bound memory. Zero-gain sensors carry no
    information and are skipped.
    """
    gains, grads = gains_with_gradients(backend, geom, ue, sensors.azimuths_rad)
    beta = np.atleast_1d(pathloss(sensors.ranges_m, geom.wavelength_m))
    nc = np.atleast_1d(noncentrality(p_t_watts, beta, gains, sigma2_watts))
    dnc = (2.0 * p_t_watts / sigma2_watts) * beta[:, None] * grads
    keep = np.flatnonzero(nc > 0.0)
    rng = np.random.default_rng(seed)
    block_scores = np.empty((n_trials, 2))
    done = 0
    chunk = max(1, int(8e6) // max(1, n_snapshots * keep.size))
    while done < n_trials:
        m = min(chunk, n_trials - done)
        acc = np.zeros((m, 2))
        for k in keep:
            dist = NoncentralChiSq2(float(nc[k]))
            z = rng.noncentral_chisquare(2.0, nc[k], size=(m, n_snapshots))
            acc += score(z, dist).sum(axis=1)[:, None] * dnc[k]
        block_scores[done:done + m] = acc
        done += m
    return np.cov(block_scores, rowvar=False)
