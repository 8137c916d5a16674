"""ULA geometry, near- and far-field steering, and the matched beamformer.

Everything downstream (leakage patterns, Fisher information, estimators)
is built on the conventions fixed here: a uniform linear array along one
axis, elements indexed symmetrically about the array center, polar
coordinates (range, azimuth) with azimuth measured from the array axis so
that broadside is pi/2. The near-field response keeps the quadratic term
of the element-range expansion; the far-field response keeps only the
linear term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ArrayGeometry",
    "UeLocation",
    "SensorLocation",
    "SensorSet",
    "element_offsets",
    "nf_steering",
    "ff_steering",
    "mrt_beamformer",
    "los_channel",
    "pathloss",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count, spacing, carrier wavelength.

    Element n (1-based) sits at offset (n - (N+1)/2) * spacing along the
    array axis. Even counts therefore have half-integer offsets and no
    center element; nothing downstream may assume one exists.
    """

    n_elements: int
    spacing_m: float
    wavelength_m: float

    def __post_init__(self) -> None:
        if self.n_elements < 2:
            raise ValueError("array needs at least 2 elements")
        if not (self.spacing_m > 0.0 and math.isfinite(self.spacing_m)):
            raise ValueError("spacing must be positive and finite")
        if not (self.wavelength_m > 0.0 and math.isfinite(self.wavelength_m)):
            raise ValueError("wavelength must be positive and finite")

    @classmethod
    def half_wavelength(cls, n_elements: int, wavelength_m: float) -> "ArrayGeometry":
        """Array at the default spacing of half a wavelength."""
        return cls(n_elements, wavelength_m / 2.0, wavelength_m)

    @property
    def aperture_m(self) -> float:
        """End-to-end array length (N - 1) * spacing."""
        return (self.n_elements - 1) * self.spacing_m

    @property
    def rayleigh_distance_m(self) -> float:
        """Near/far-field boundary 2 D^2 / wavelength."""
        return 2.0 * self.aperture_m**2 / self.wavelength_m

    @property
    def focusing_near_edge_m(self) -> float:
        """Inner edge of the usable focusing region, twice the aperture."""
        return 2.0 * self.aperture_m


@dataclass(frozen=True)
class UeLocation:
    """Focal point in polar form: range from the array center plus azimuth.

    The azimuth interval is open at both array-axis endpoints, where the
    quadratic range expansion degenerates (zero effective aperture).
    """

    distance_m: float
    azimuth_rad: float

    def __post_init__(self) -> None:
        if not (self.distance_m > 0.0 and math.isfinite(self.distance_m)):
            raise ValueError("distance must be positive and finite")
        if not 0.0 < self.azimuth_rad < math.pi:
            raise ValueError("azimuth must lie strictly inside (0, pi)")


@dataclass(frozen=True)
class SensorLocation:
    """One passive power sensor at known polar coordinates."""

    range_m: float
    azimuth_rad: float


@dataclass(frozen=True)
class SensorSet:
    """Known polar coordinates of the passive sensors, as parallel arrays.

    Order is meaningless to every consumer (patterns, FIMs, estimators are
    permutation-covariant); it is fixed here only so exports are stable.
    """

    ranges_m: np.ndarray
    azimuths_rad: np.ndarray

    def __post_init__(self) -> None:
        r = np.atleast_1d(np.asarray(self.ranges_m, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.azimuths_rad, dtype=np.float64))
        if r.ndim != 1 or a.shape != r.shape:
            raise ValueError("ranges and azimuths must be 1-d and equal length")
        if r.size and np.any(r <= 0.0):
            raise ValueError("sensor ranges must be positive")
        object.__setattr__(self, "ranges_m", r)
        object.__setattr__(self, "azimuths_rad", a)

    def __len__(self) -> int:
        return int(self.ranges_m.size)

    def __iter__(self):
        for r, a in zip(self.ranges_m, self.azimuths_rad):
            yield SensorLocation(float(r), float(a))

    def permuted(self, order: np.ndarray) -> "SensorSet":
        """The same sensors listed in a different order."""
        idx = np.asarray(order, dtype=np.intp)
        return SensorSet(self.ranges_m[idx], self.azimuths_rad[idx])

    def assert_far_field(self, geom: ArrayGeometry) -> None:
        """Raise unless every sensor is at or beyond the Rayleigh distance."""
        d_f = geom.rayleigh_distance_m
        if len(self) and float(self.ranges_m.min()) < d_f:
            raise ValueError(
                f"sensor at {self.ranges_m.min():.3f} m is inside the "
                f"far-field boundary {d_f:.3f} m"
            )


def element_offsets(geom: ArrayGeometry) -> np.ndarray:
    """Signed element positions along the array axis, centered on zero."""
    n = np.arange(1, geom.n_elements + 1, dtype=np.float64)
    return (n - 0.5 * (geom.n_elements + 1)) * geom.spacing_m


def nf_steering(geom: ArrayGeometry, ue: UeLocation) -> np.ndarray:
    """Near-field array response at a focal point, unit modulus entrywise.

    Entry n carries phase -(2 pi / lambda) * (r_n^2 sin^2(az) / (2 d)
    - r_n cos(az)) with r_n the element offset: the exact element range
    expanded about the array center, truncated after the quadratic term.
    The dropped cubic term has magnitude (2 pi / lambda) * r_n^3
    * |cos(az)| sin^2(az) / (2 d^2), which bounds the phase error.
    """
    off = element_offsets(geom)
    sin_a = math.sin(ue.azimuth_rad)
    cos_a = math.cos(ue.azimuth_rad)
    wavenumber = 2.0 * math.pi / geom.wavelength_m
    phase = -wavenumber * (
        off * off * (sin_a * sin_a) / (2.0 * ue.distance_m) - off * cos_a
    )
    return np.exp(1j * phase)


def ff_steering(geom: ArrayGeometry, azimuth_rad: float) -> np.ndarray:
    """Far-field (plane-wave) array response toward an azimuth."""
    off = element_offsets(geom)
    wavenumber = 2.0 * math.pi / geom.wavelength_m
    return np.exp(1j * (wavenumber * math.cos(azimuth_rad)) * off)


def mrt_beamformer(geom: ArrayGeometry, ue: UeLocation) -> np.ndarray:
    """Unit-power transmit weights matched to the focal-point response."""
    return nf_steering(geom, ue) / math.sqrt(geom.n_elements)


def los_channel(geom: ArrayGeometry, ue: UeLocation) -> np.ndarray:
    """Line-of-sight channel: pathloss amplitude, carrier phase, response.

    The scalar carrier phase exp(-j 2 pi d / lambda) cancels from every
    power quantity downstream; it is kept so the channel is physically
    complete, and no test depends on it.
    """
    amp = math.sqrt(pathloss(ue.distance_m, geom.wavelength_m))
    carrier = np.exp(-2j * math.pi * ue.distance_m / geom.wavelength_m)
    return amp * carrier * nf_steering(geom, ue)


def pathloss(distance_m, wavelength_m: float):
    """Free-space power attenuation (wavelength / (4 pi d))^2.

    Accepts a scalar or an array of distances; the result matches the
    input shape.
    """
    d = np.asarray(distance_m, dtype=np.float64)
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        raise ValueError("distance must be positive and finite")
    if wavelength_m <= 0.0:
        raise ValueError("wavelength must be positive")
    ratio = wavelength_m / (4.0 * math.pi * d)
    out = ratio * ratio
    return float(out) if out.ndim == 0 else out
