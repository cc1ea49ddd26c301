import math

import numpy as np
import pytest
from scipy import stats

from periphase.ergodic import (
    EmpiricalLaw,
    OUAnalytic,
    empirical_invariant,
    gaussian_expectation,
    lln_functional,
    ou_analytic_from_model,
    ou_mean_direct,
    ou_moments,
    phase_samples,
    registry_function,
)
from periphase.simulate import extract_segments, simulate_path

from conftest import make_model

T = 10.0


@pytest.fixture(scope="module")
def long_path(ou_sinusoid_model):
    return simulate_path(ou_sinusoid_model, 1.0, 2020, 1000, seed=71)


class TestOuMoments:
    def test_constant_signal(self):
        m = make_model(lam=1.5, lam_star=1e-9, theta=4.0)
        ou = ou_analytic_from_model(m)
        for r in (0.0, 3.3, 9.9):
            mean, _ = ou_moments(ou, r)
            assert mean == pytest.approx(1.5, abs=1e-8)

    def test_variance_half(self, ou_sinusoid_model):
        ou = ou_analytic_from_model(ou_sinusoid_model)
        _, var = ou_moments(ou, 2.0)
        assert var == 0.5

    def test_dual_route_agreement(self):
        m = make_model(lam=0.0, lam_star=1.0, theta=4.0)
        ou = ou_analytic_from_model(m)
        for r in (0.0, 4.5, 6.9, 7.1):
            geometric, _ = ou_moments(ou, r)
            direct = ou_mean_direct(ou, r)
            assert abs(geometric - direct) < 1e-10

    def test_burst_raises_mean_inside_window(self, ou_model):
        ou = ou_analytic_from_model(ou_model)
        mid, _ = ou_moments(ou, 4.0 + 1.5)   # burst centre
        pre, _ = ou_moments(ou, 3.9)         # just before onset
        assert mid > pre

    def test_drift_offset_folded_in(self):
        m = make_model(lam=0.0, lam_star=1e-9, b=("affine", (2.0, 1.0)))
        ou = ou_analytic_from_model(m)
        mean, _ = ou_moments(ou, 1.0)
        assert mean == pytest.approx(2.0, abs=1e-8)

    def test_requires_constant_sigma(self, rational_sigma_model):
        with pytest.raises(ValueError):
            ou_analytic_from_model(rational_sigma_model)


class TestEmpiricalInvariant:
    def test_matches_analytic_marginals(self, ou_sinusoid_model, long_path):
        ou = ou_analytic_from_model(ou_sinusoid_model)
        for r in (0.0, 5.5):
            law = empirical_invariant(phase_samples(long_path, r), burn_in=20)
            mean_t, var_t = ou_moments(ou, r)
            assert abs(law.mean - mean_t) < 3 * law.mean_se
            var_se = math.sqrt(2.0 / (law.n - 1)) * law.variance
            assert abs(law.variance - var_t) < 3 * var_se

    def test_zero_signal_symmetry(self):
        m = make_model(lam=0.0, lam_star=1e-12)
        p = simulate_path(m, 0.0, 600, 300, seed=13)
        law = empirical_invariant(phase_samples(p, 0.0), burn_in=20)
        assert abs(law.mean) < 3 * law.mean_se

    def test_signal_on_exceeds_signal_off(self, ou_model):
        # ordering certified by the analytic oracle first
        ou = ou_analytic_from_model(ou_model)
        m_on, _ = ou_moments(ou, 5.5)
        m_off, _ = ou_moments(ou, 3.9)
        assert m_on > m_off
        p = simulate_path(ou_model, 1.0, 1520, 500, seed=14)
        on = empirical_invariant(phase_samples(p, 5.5), burn_in=20)
        off = empirical_invariant(phase_samples(p, 3.9), burn_in=20)
        assert on.mean - off.mean > (m_on - m_off) - 3 * math.hypot(on.mean_se, off.mean_se)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            empirical_invariant(np.zeros(150), burn_in=100)

    def test_quantiles_monotone(self, long_path):
        law = empirical_invariant(phase_samples(long_path, 1.0), burn_in=20)
        qs = law.quantile([0.1, 0.5, 0.9])
        assert qs[0] <= qs[1] <= qs[2]


class TestSegmentStationarity:
    def test_shift_invariance_two_point_marginals(self, long_path):
        n = long_path.n_periods
        half = (n - 20) // 2
        for r in (0.0, 5.5):
            samples = phase_samples(long_path, r)[20:]
            first, second = samples[:half], samples[half:2 * half]
            res = stats.ks_2samp(first, second)
            assert res.pvalue > 0.01

    def test_pairwise_marginal_invariance(self, long_path):
        # (xi_{kT+t1}, xi_{kT+t2}) law stable under k-shift: compare a
        # scalar functional of the pair across halves
        s1 = phase_samples(long_path, 2.0)[20:]
        s2 = phase_samples(long_path, 8.0)[20:]
        pair = s1 + 2.0 * s2
        half = len(pair) // 2
        res = stats.ks_2samp(pair[:half], pair[half:])
        assert res.pvalue > 0.01


class TestLLN:
    def test_point_sample_identity(self, ou_sinusoid_model, long_path):
        res = lln_functional(long_path, ("point_sample", 5.5), registry_function("identity"))
        ou = ou_analytic_from_model(ou_sinusoid_model)
        m_t, _ = ou_moments(ou, 5.5)
        assert res.limit == pytest.approx(m_t / T, rel=1e-9)
        tail = res.running_average[-len(res.running_average) // 4:]
        se = np.std(phase_samples(long_path, 5.5), ddof=1) / math.sqrt(long_path.n_periods)
        assert abs(res.terminal - res.limit) < 3 * se / T + 3e-4
        assert np.ptp(tail) < 4 * se

    def test_dirac_comb_alias(self, long_path):
        a = lln_functional(long_path, ("point_sample", 2.0), registry_function("identity"))
        b = lln_functional(long_path, ("dirac_comb", 2.0), registry_function("identity"))
        assert a.terminal == b.terminal

    def test_interval_indicator_exact(self, long_path):
        res = lln_functional(long_path, ("interval_integral", 2.0, 6.0),
                             registry_function("constant", 1.0))
        assert res.limit == pytest.approx(0.4, rel=1e-12)
        # f == 1 makes A_t the occupation measure: terminal == limit exactly
        assert res.terminal == pytest.approx(0.4, rel=1e-12)

    def test_square_second_moment(self, ou_sinusoid_model, long_path):
        res = lln_functional(long_path, ("point_sample", 3.0), registry_function("square"))
        ou = ou_analytic_from_model(ou_sinusoid_model)
        m_t, v_t = ou_moments(ou, 3.0)
        assert res.limit == pytest.approx((m_t ** 2 + v_t) / T, rel=1e-9)
        samples = phase_samples(long_path, 3.0) ** 2
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        assert abs(res.terminal - res.limit) < 3 * se / T + 3e-4

    def test_interval_integral_of_identity(self, ou_sinusoid_model, long_path):
        res = lln_functional(long_path, ("interval_integral", 4.5, 6.5),
                             registry_function("identity"))
        assert res.limit is not None
        per_period = np.diff(np.concatenate([[0.0], res.running_average * res.times]))
        se = per_period.std(ddof=1) / math.sqrt(len(per_period)) / T
        assert abs(res.terminal - res.limit) < 3 * se + 3e-4

    def test_unknown_functional(self, long_path):
        with pytest.raises(ValueError):
            lln_functional(long_path, ("spectral", 1.0), registry_function("identity"))


class TestGaussianExpectation:
    def test_closed_forms(self):
        m, v = 1.2, 0.49
        assert gaussian_expectation(registry_function("identity"), m, v) == m
        assert gaussian_expectation(registry_function("square"), m, v) == pytest.approx(m * m + v)
        assert gaussian_expectation(registry_function("affine", 1.0, 2.0), m, v) == pytest.approx(1.0 - 2.0 * m)
        cdf = gaussian_expectation(registry_function("indicator_below", 1.2), m, v)
        assert cdf == pytest.approx(0.5, abs=1e-12)

    def test_quadrature_route_matches_mc(self, rng):
        f = registry_function("bounded_rational", 1.0, 0.5)
        m, v = 0.7, 0.36
        quad_val = gaussian_expectation(f, m, v)
        mc = np.mean(f[2](rng.normal(m, math.sqrt(v), 400_000)))
        assert quad_val == pytest.approx(mc, abs=4e-3)


def test_segment_chain_matches_phase_samples(ou_model):
    p = simulate_path(ou_model, 0.0, 30, 100, seed=2)
    chain = extract_segments(p)
    r_idx = 37
    from_chain = np.array([chain[k][r_idx] for k in range(len(chain))])
    assert np.array_equal(from_chain, phase_samples(p, r_idx * p.dt))
