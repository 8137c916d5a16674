"""Power-only sensor observations and their noncentral chi-square law.

A sensor holding a deterministic signal component of power P in noise of
variance sigma2 measures instantaneous powers p = |s + n|^2. Normalized
as z = 2 p / sigma2, these samples follow a noncentral chi-square law
with 2 degrees of freedom and noncentrality nc = 2 P / sigma2. That
factor of two matters: dividing by sigma2 alone gives a variable whose
distribution carries an awkward 1/2 scale, while 2 p / sigma2 makes the
textbook chi-square density, likelihood, and Fisher information apply
verbatim. Estimators consume the per-sensor time average in the form
mean(p) / sigma2 - 1, whose expectation is exactly the noiseless model
value P / sigma2.

Sampling is reproducible: a block is fully determined by its seed, and
the draw order is documented on ``sample_block`` so independently
written code can replay it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .leakage import LeakagePattern
from .specfun import bessel_i1_over_i0, log_bessel_i0

__all__ = [
    "NoiseModel",
    "NoncentralChiSq2",
    "ObservationBlock",
    "noncentrality",
    "sample_block",
    "loglik",
    "score",
    "write_blocks_csv",
]


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise: complex Gaussian with total variance sigma2 (watts)."""

    sigma2_watts: float

    def __post_init__(self) -> None:
        if not (self.sigma2_watts > 0.0 and math.isfinite(self.sigma2_watts)):
            raise ValueError("noise variance must be positive and finite")


@dataclass(frozen=True)
class NoncentralChiSq2:
    """Noncentral chi-square distribution with 2 degrees of freedom."""

    nc: float

    def __post_init__(self) -> None:
        if not (self.nc >= 0.0 and math.isfinite(self.nc)):
            raise ValueError("noncentrality must be nonnegative and finite")

    @property
    def mean(self) -> float:
        return 2.0 + self.nc

    @property
    def variance(self) -> float:
        return 4.0 + 4.0 * self.nc


@dataclass(frozen=True)
class ObservationBlock:
    """One simulated measurement block.

    ``inst`` holds the normalized instantaneous powers 2 p / sigma2,
    shape (sensors, snapshots); ``mean_normalized`` the per-sensor
    statistic mean(p) / sigma2 - 1 that estimators consume.
    """

    inst: np.ndarray
    mean_normalized: np.ndarray
    n_sensors: int
    n_snapshots: int
    seed: int


def noncentrality(p_t_watts: float, beta, gain, sigma2_watts: float):
    """Noncentrality 2 P_t beta g / sigma2 of the normalized power samples.

    ``beta`` and ``gain`` may be scalars or aligned arrays; the result
    follows their broadcast shape.
    """
    if not (p_t_watts > 0.0 and math.isfinite(p_t_watts)):
        raise ValueError("transmit power must be positive")
    if not (sigma2_watts > 0.0 and math.isfinite(sigma2_watts)):
        raise ValueError("noise variance must be positive")
    b = np.asarray(beta, dtype=np.float64)
    g = np.asarray(gain, dtype=np.float64)
    if np.any(b <= 0.0):
        raise ValueError("pathloss must be positive")
    if np.any(g < 0.0):
        raise ValueError("gain must be nonnegative")
    out = 2.0 * p_t_watts * b * g / sigma2_watts
    return float(out) if out.ndim == 0 else out


def sample_block(
    pattern: LeakagePattern,
    noise: NoiseModel,
    n_snapshots: int,
    seed: int,
) -> ObservationBlock:
    """Draw one block of normalized power samples for a leakage pattern.

    Draw order (the reproducibility contract): a PCG64 generator seeded
    with ``seed`` produces two standard-normal blocks of shape
    (sensors, snapshots), the first for the real noise component, the
    second for the imaginary one; both are scaled by sqrt(sigma2 / 2)
    and the deterministic amplitude sqrt(mean_power) is added to the
    real part. The signal phase is irrelevant to |s + n|^2 because the
    noise is circular, so it is fixed at zero.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    k = len(pattern)
    rng = np.random.default_rng(seed)
    half = 0.5 * noise.sigma2_watts
    re = rng.standard_normal((k, n_snapshots)) * math.sqrt(half)
    im = rng.standard_normal((k, n_snapshots)) * math.sqrt(half)
    amp = np.sqrt(pattern.mean_powers)[:, None]
    p = (amp + re) ** 2 + im**2
    inst = 2.0 * p / noise.sigma2_watts
    mean_normalized = p.mean(axis=1) / noise.sigma2_watts - 1.0
    return ObservationBlock(inst, mean_normalized, k, int(n_snapshots), int(seed))


def loglik(z, dist: NoncentralChiSq2):
    """Log-density of the 2-dof noncentral chi-square at z.

    Finite for every z >= 0 and any noncentrality: the Bessel factor is
    evaluated in log form, so large arguments never overflow. Accepts a
    scalar or an array of sample values.
    """
    za = np.asarray(z, dtype=np.float64)
    if np.any(za < 0.0) or not np.all(np.isfinite(za)):
        raise ValueError("samples must be finite and nonnegative")
    out = -math.log(2.0) - 0.5 * (dist.nc + za) + log_bessel_i0(np.sqrt(dist.nc * za))
    return float(out) if np.ndim(out) == 0 else out


def score(z, dist: NoncentralChiSq2):
    """Derivative of ``loglik`` with respect to the noncentrality.

    Defined for strictly positive noncentrality only; the ratio form
    -1/2 + (1/2) sqrt(z / nc) I1/I0(sqrt(nc z)) is exact and stable for
    arbitrarily large arguments. Accepts a scalar or an array.
    """
    if dist.nc <= 0.0:
        raise ValueError("score needs strictly positive noncentrality")
    za = np.asarray(z, dtype=np.float64)
    if np.any(za < 0.0) or not np.all(np.isfinite(za)):
        raise ValueError("samples must be finite and nonnegative")
    root = np.sqrt(za * dist.nc)
    out = -0.5 + 0.5 * np.sqrt(za / dist.nc) * bessel_i1_over_i0(root)
    return float(out) if np.ndim(out) == 0 else out


def write_blocks_csv(path: str | Path, blocks: Iterable[ObservationBlock]) -> None:
    """Write blocks as columnar rows (trial, sensor, snapshot, z)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "sensor", "snapshot", "z"])
        for trial, block in enumerate(blocks):
            for k in range(block.n_sensors):
                for t in range(block.n_snapshots):
                    writer.writerow([trial, k, t, repr(float(block.inst[k, t]))])
