"""Observation-model tests: sampling law, likelihood, score."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from leakloc.leakage import LeakagePattern
from leakloc.observation import (
    NoiseModel,
    NoncentralChiSq2,
    loglik,
    noncentrality,
    sample_block,
    score,
)

# loglik(z=100, nc=100), mpmath mp.dps=50
LOGLIK_FROZEN_100_100 = -3.913414490617361592729


def pattern_for_nc(nc: float, n_sensors: int = 1, sigma2: float = 1.0) -> LeakagePattern:
    """Single-power pattern whose normalized samples have noncentrality nc."""
    power = nc * sigma2 / 2.0
    return LeakagePattern(np.full(n_sensors, 1.0), np.full(n_sensors, power))


def model_cdf_grid(nc: float, n_points: int = 200001):
    dist = NoncentralChiSq2(nc)
    hi = dist.mean + 15.0 * math.sqrt(dist.variance)
    z = np.linspace(0.0, hi, n_points)
    pdf = np.exp(loglik(z, dist))
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(z))])
    return z, cdf


def ks_statistic(samples: np.ndarray, grid: np.ndarray, cdf: np.ndarray) -> float:
    x = np.sort(samples)
    f = np.interp(x, grid, cdf)
    n = x.size
    steps = np.arange(1, n + 1) / n
    return max(float(np.max(np.abs(steps - f))),
               float(np.max(np.abs(steps - 1.0 / n - f))))


class TestNoncentrality:
    def test_zero_gain(self):
        assert noncentrality(0.2, 1e-10, 0.0, 1e-12) == 0.0

    def test_noise_scaling(self):
        lo = noncentrality(0.2, 1e-10, 1.0, 2e-12)
        hi = noncentrality(0.2, 1e-10, 1.0, 1e-12)
        assert hi == pytest.approx(2.0 * lo, rel=1e-12)

    def test_link_budget_reference(self):
        # 23 dBm transmit, 15 GHz carrier, 120 m range, -85 dBm noise
        p_t = 10.0 ** ((23.0 - 30.0) / 10.0)
        lam = 299792458.0 / 15e9
        beta = (lam / (4.0 * math.pi * 120.0)) ** 2
        sigma2 = 10.0 ** ((-85.0 - 30.0) / 10.0)
        assert beta == pytest.approx(1.75661532627884274e-10, rel=1e-12)
        nc = noncentrality(p_t, beta, 1.0, sigma2)
        assert nc == pytest.approx(22.1669868308421368, rel=1e-10)

    def test_array_broadcast(self):
        out = noncentrality(0.2, np.array([1e-10, 2e-10]), np.array([1.0, 1.0]), 1e-12)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(2.0 * out[0])

    @pytest.mark.parametrize("kwargs", [
        dict(p_t_watts=0.0, beta=1e-10, gain=1.0, sigma2_watts=1e-12),
        dict(p_t_watts=0.2, beta=-1e-10, gain=1.0, sigma2_watts=1e-12),
        dict(p_t_watts=0.2, beta=1e-10, gain=-1.0, sigma2_watts=1e-12),
        dict(p_t_watts=0.2, beta=1e-10, gain=1.0, sigma2_watts=0.0),
    ])
    def test_domain_errors(self, kwargs):
        with pytest.raises(ValueError):
            noncentrality(**kwargs)


class TestSampleBlock:
    def test_central_case_moments(self):
        block = sample_block(pattern_for_nc(0.0), NoiseModel(1.0), 10**6, seed=101)
        se_mean = math.sqrt(4.0 / 1e6)
        assert block.inst.mean() == pytest.approx(2.0, abs=3 * se_mean)
        se_stat = math.sqrt(1.0 / 1e6)
        assert block.mean_normalized[0] == pytest.approx(0.0, abs=3 * se_stat)

    def test_noncentral_moments(self):
        nc = 10.0
        block = sample_block(pattern_for_nc(nc), NoiseModel(1.0), 10**6, seed=202)
        var = 4.0 + 4.0 * nc
        se_mean = math.sqrt(var / 1e6)
        assert block.inst.mean() == pytest.approx(2.0 + nc, abs=3 * se_mean)
        # 4th central moment of the law sets the variance of the sample variance
        mu4 = var**2 * (3.0 + 12.0 * (2.0 + 4.0 * nc) / (2.0 + 2.0 * nc) ** 2)
        se_var = math.sqrt((mu4 - var**2) / 1e6)
        assert block.inst.var() == pytest.approx(var, abs=3 * se_var)

    def test_mean_statistic_expectation(self):
        sigma2 = 3.2e-12
        power = 5.0 * sigma2  # model value P / sigma2 = 5
        pattern = LeakagePattern(np.array([1.0]), np.array([power]))
        block = sample_block(pattern, NoiseModel(sigma2), 10**6, seed=7)
        nc = 2.0 * power / sigma2
        se = math.sqrt((4.0 + 4.0 * nc) / 4.0 / 1e6)
        assert block.mean_normalized[0] == pytest.approx(5.0, abs=3 * se)

    def test_determinism(self):
        pattern = pattern_for_nc(3.0, n_sensors=4)
        a = sample_block(pattern, NoiseModel(1.0), 100, seed=99)
        b = sample_block(pattern, NoiseModel(1.0), 100, seed=99)
        assert np.array_equal(a.inst, b.inst)
        assert np.array_equal(a.mean_normalized, b.mean_normalized)
        c = sample_block(pattern, NoiseModel(1.0), 100, seed=100)
        assert not np.array_equal(a.inst, c.inst)

    @pytest.mark.parametrize("nc", [0.0, 1.0, 10.0, 100.0])
    def test_distribution_ks(self, nc):
        block = sample_block(pattern_for_nc(nc), NoiseModel(1.0), 10**5,
                             seed=5000 + int(nc))
        grid, cdf = model_cdf_grid(nc)
        stat = ks_statistic(block.inst[0], grid, cdf)
        assert stat < 0.005

    def test_sensor_independence(self):
        block = sample_block(pattern_for_nc(4.0, n_sensors=5), NoiseModel(1.0),
                             10**5, seed=31)
        corr = np.corrcoef(block.inst)
        off_diag = corr[~np.eye(5, dtype=bool)]
        assert np.max(np.abs(off_diag)) < 0.01

    def test_snapshot_validation(self):
        with pytest.raises(ValueError):
            sample_block(pattern_for_nc(1.0), NoiseModel(1.0), 0, seed=1)


class TestLoglik:
    def test_central_point(self):
        assert loglik(2.0, NoncentralChiSq2(0.0)) == pytest.approx(
            -math.log(2.0) - 1.0, rel=1e-14)

    def test_normalization(self):
        dist = NoncentralChiSq2(5.0)
        total, _ = quad(lambda z: math.exp(loglik(z, dist)), 0.0, 80.0,
                        epsabs=1e-10, epsrel=1e-10, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_large_arguments_stable(self):
        val = loglik(100.0, NoncentralChiSq2(100.0))
        assert math.isfinite(val)
        assert val == pytest.approx(LOGLIK_FROZEN_100_100, abs=1e-8)

    def test_negative_sample_rejected(self):
        with pytest.raises(ValueError):
            loglik(-0.1, NoncentralChiSq2(1.0))


class TestScore:
    def test_zero_sample(self):
        assert score(0.0, NoncentralChiSq2(3.0)) == -0.5

    @pytest.mark.parametrize("nc", [0.5, 5.0, 50.0])
    def test_zero_mean_property(self, nc):
        dist = NoncentralChiSq2(nc)
        hi = dist.mean + 14.0 * math.sqrt(dist.variance)
        val, _ = quad(lambda z: math.exp(loglik(z, dist)) * score(z, dist),
                      0.0, hi, epsabs=1e-10, epsrel=1e-10, limit=400)
        assert val == pytest.approx(0.0, abs=1e-6)

    def test_matches_loglik_derivative(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            z = float(rng.uniform(0.01, 300.0))
            nc = float(np.exp(rng.uniform(math.log(0.05), math.log(200.0))))
            h = 1e-6 * nc
            fd = (loglik(z, NoncentralChiSq2(nc + h))
                  - loglik(z, NoncentralChiSq2(nc - h))) / (2.0 * h)
            s = score(z, NoncentralChiSq2(nc))
            assert s == pytest.approx(fd, abs=1e-5 * max(1.0, abs(s)))

    def test_central_rejected(self):
        with pytest.raises(ValueError):
            score(1.0, NoncentralChiSq2(0.0))
