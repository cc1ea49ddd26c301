import math

import numpy as np
import pytest

from periphase.estimators import j_theta
from periphase.likelihood import (
    PhaseProfiles,
    bracket_check,
    curve_values,
    hellinger_mc,
    local_curve,
    log_lr,
    martingale_clt_check,
    profiles_from_path,
    recover_increments,
    simulate_profiles,
)
from periphase.simulate import simulate_path

from conftest import make_model

T = 10.0


@pytest.fixture(scope="module")
def model():
    return make_model()


@pytest.fixture(scope="module")
def path(model):
    return simulate_path(model, 1.0, 30, 500, seed=301)


class TestRecoverIncrements:
    def test_quadratic_variation(self, model, path):
        db = recover_increments(path, model, 4.0)
        qv = float(np.sum(db ** 2)) / path.duration
        se = math.sqrt(2.0 / len(db))  # QV/t for Gaussian increments
        assert abs(qv - 1.0) < 3 * se

    def test_wrong_parameter_adds_window_drift(self, model, path):
        from periphase.model import signal_value

        db_true = recover_increments(path, model, 4.0)
        db_off = recover_increments(path, model, 5.0)
        diff = db_off - db_true
        # exactly the deterministic drift (S(4,.) - S(5,.))/sigma dt
        times = path.times[:-1]
        expected = np.array(
            [signal_value(model.signal, t, 4.0) - signal_value(model.signal, t, 5.0)
             for t in times]
        ) * path.dt
        assert np.allclose(diff, expected, atol=1e-12)
        assert np.max(np.abs(expected)) == 2.0 * path.dt

    def test_vanishing_burst_makes_recovery_parameter_free(self, path):
        tiny = make_model(lam_star=1e-13)
        p = simulate_path(tiny, 1.0, 5, 200, seed=3)
        a = recover_increments(p, tiny, 2.0)
        b = recover_increments(p, tiny, 6.0)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_domain_error(self, model, path):
        with pytest.raises(ValueError):
            recover_increments(path, model, 7.5)


class TestLogLR:
    def test_zero_at_reference(self, model, path):
        for z in (1.0, 4.0, 6.5):
            assert log_lr(path, model, z, z) == 0.0

    def test_chain_rule_exact(self, model, path):
        # each factor recovers increments under its own reference: the
        # discrete likelihood is a ratio of Euler transition densities and
        # composes exactly
        z0, z1, z2 = 3.0, 4.2, 5.5
        direct = log_lr(path, model, z2, z0)
        composed = log_lr(path, model, z2, z1) + log_lr(path, model, z1, z0)
        assert abs(direct - composed) < 1e-10

    def test_single_reference_composition_cross_term(self, model, path):
        # composing with increments all recovered under one fixed reference
        # differs from the exact per-call-recovery value by the
        # deterministic cross term sum (S''-S')(S'-S)/sigma^2 dt; it is
        # nonzero whenever the window-difference sets overlap (take a
        # non-monotone parameter triple)
        z0, z1, z2 = 3.0, 5.0, 4.0
        prof = profiles_from_path(path, model, z0)
        a = model.signal.a
        from periphase.likelihood import _indicator_cells, _log_lr_from_cells

        naive_mid = _log_lr_from_cells(prof, z2, z1, a)  # dB under z0, not z1
        true_mid = log_lr(path, model, z2, z1)
        d0 = _indicator_cells(z0, a, path.dt, path.steps_per_period)
        d1 = _indicator_cells(z1, a, path.dt, path.steps_per_period)
        d2 = _indicator_cells(z2, a, path.dt, path.steps_per_period)
        cross = float(np.dot((d2 - d1) * (d1 - d0), prof.H)) * path.dt
        assert abs(cross) > 1.0
        assert naive_mid - true_mid == pytest.approx(cross, abs=1e-9)

    def test_burst_amplitude_scaling(self):
        # log L is O(eps) in the burst amplitude
        vals = {}
        for eps in (1e-3, 1e-6):
            m = make_model(lam_star=eps)
            p = simulate_path(m, 1.0, 10, 200, seed=77)
            vals[eps] = log_lr(p, m, 5.0, 4.0)
        assert abs(vals[1e-6]) < 2e-3 * abs(vals[1e-3]) + 1e-12

    def test_martingale_identity(self, model):
        # E_zeta[L^{zeta'/zeta}] = 1 exactly in this discretization; check
        # by Monte Carlo at 3 SE
        # keep J*n*|dz| small so the plain-MC mean of L is well behaved
        res = hellinger_mc(model, zeta=4.0, zeta_prime=4.05, n_periods=10,
                           replicates=6000, seed=41, steps_per_period=200)
        assert abs(res.mean_l - 1.0) < 3 * res.se_l

    def test_parameter_domain(self, model, path):
        with pytest.raises(ValueError):
            log_lr(path, model, 7.5, 4.0)


class TestLocalCurve:
    def test_zero_at_origin_and_consistency(self, model, path):
        u = np.array([-20.0, -5.0, 0.0, 5.0, 20.0])
        curve = local_curve(path, model, 4.0, u)
        assert curve.log_lr[2] == 0.0
        n = path.n_periods
        for uu, val in zip(u, curve.log_lr):
            assert val == pytest.approx(log_lr(path, model, 4.0 + uu / n, 4.0), abs=1e-10)

    def test_out_of_space_points_flagged(self, model, path):
        n = path.n_periods
        u_bad = (7.0 - 4.0) * n + 10.0  # theta + u/n beyond T - a
        curve = local_curve(path, model, 4.0, [0.0, u_bad])
        assert not curve.excluded[0]
        assert curve.excluded[1]
        assert np.isnan(curve.log_lr[1])

    def test_local_field_moments(self):
        # half-cell offset theta keeps the 1/n windows exactly resolved
        spp, n, reps, u = 4000, 200, 600, 5.0
        dt = T / spp
        theta = 4.0 + dt / 2
        m = make_model(theta=theta)
        seeds = [(29 << 64) | i for i in range(reps)]
        G, H = simulate_profiles(m, 1.0, n, spp, seeds, zeta_ref=theta)
        prof = PhaseProfiles(G=G[0], H=H[0], dt=dt, spp=spp, n_periods=n, zeta_ref=theta)
        ll = curve_values(prof, 3.0, np.array([theta + u / n]), g_rows=G, h_rows=H)[:, 0]
        J = j_theta(m, theta)
        se = ll.std(ddof=1) / math.sqrt(reps)
        assert abs(ll.mean() + J * u / 2) < 3 * se
        assert ll.var(ddof=1) == pytest.approx(J * u, rel=0.10)


class TestHellinger:
    def test_coincident_parameters_are_degenerate(self, model):
        p = simulate_path(model, 1.0, 5, 200, seed=51)
        l = log_lr(p, model, 4.0, 4.0)
        assert (1 - math.exp(0.5 * l)) ** 2 == 0.0
        assert math.exp(0.5 * l) == 1.0
        assert (1 - math.exp(0.25 * l)) ** 4 == 0.0

    def test_symmetry_in_parameters(self, model):
        a = hellinger_mc(model, 4.0, 4.3, n_periods=20, replicates=3000,
                         seed=52, steps_per_period=400)
        b = hellinger_mc(model, 4.3, 4.0, n_periods=20, replicates=3000,
                         seed=53, steps_per_period=400)
        assert abs(a.est_sq - b.est_sq) < 3 * math.hypot(a.se_sq, b.se_sq)

    def test_sqrt_l_decays_with_horizon(self, model):
        # E[sqrt(L)] <= exp(-k floor(t/T) |dz|): qualitative exponential decay
        means = []
        for n in (10, 30, 90):
            r = hellinger_mc(model, 4.0, 4.4, n_periods=n, replicates=1500,
                             seed=54, steps_per_period=200)
            means.append(r.est_root)
        assert means[0] > means[1] > means[2]
        # log-scale decay at least linear in n
        assert math.log(means[2]) < math.log(means[0]) * 2

    def test_approaches_limit_forms(self, model):
        # n|dz| fixed at 1 => v = J*n*dz = 8: limit values from the closed
        # forms; finite-n bias shrinks with n, so test at generous 3SE+bias
        r = hellinger_mc(model, 4.0, 4.0 + 1.0 / 150, n_periods=150,
                         replicates=2500, seed=55, steps_per_period=3000)
        assert r.limit_sq == pytest.approx(2 * (1 - math.exp(-1.0)), abs=1e-12)
        assert abs(r.est_sq - r.limit_sq) < 0.12
        assert abs(r.est_root - r.limit_root) < 0.05

    def test_small_separation_ratio_bounded(self, model):
        # H^2/(n |dz|) stays bounded as n|dz| -> 0
        ratios = []
        for dz in (0.2, 0.05):
            r = hellinger_mc(model, 4.0, 4.0 + dz / 20, n_periods=20,
                             replicates=2500, seed=56, steps_per_period=400)
            h2 = 0.5 * r.est_sq
            ratios.append(h2 / (20 * dz / 20))
        assert all(x < 8.0 for x in ratios)  # J/8 scale = 1, generous cap

    def test_overlap_regime_required(self, model):
        with pytest.raises(ValueError):
            hellinger_mc(model, 1.0, 5.0, n_periods=5, replicates=10, seed=1)


class TestBracket:
    def test_constant_sigma_exact(self, model):
        res = bracket_check(model, r=2.0, h=1.0, n=100, seed=61, steps_per_period=1000)
        assert res.lhs == pytest.approx(1.0, abs=1e-10)
        assert res.rhs == pytest.approx(1.0, abs=1e-10)
        assert res.limit == pytest.approx(1.0, abs=1e-12)

    def test_negative_h_symmetric(self, model):
        res = bracket_check(model, r=2.0, h=-1.0, n=100, seed=61, steps_per_period=1000)
        assert res.lhs == pytest.approx(1.0, abs=1e-10)
        assert res.rhs == pytest.approx(1.0, abs=1e-10)

    def test_rational_sigma_converges(self, rational_sigma_model):
        res = bracket_check(rational_sigma_model, r=2.0, h=2.0, n=200,
                            seed=62, steps_per_period=8000)
        assert not res.underresolved
        assert abs(res.lhs - res.rhs) <= 0.05 * abs(res.rhs)
        assert abs(res.lhs - res.limit) <= 0.10 * abs(res.limit)

    def test_underresolved_flag(self, model):
        res = bracket_check(model, r=2.0, h=1.0, n=200, seed=63, steps_per_period=1000)
        assert res.cells_per_window < 4
        assert res.underresolved

    def test_window_validation(self, model):
        with pytest.raises(ValueError):
            bracket_check(model, r=0.0, h=1.0, n=10, seed=1)
        with pytest.raises(ValueError):
            bracket_check(model, r=1.0, h=20.0, n=10, seed=1)


@pytest.fixture(scope="module")
def clt_result(model):
    dt = T / 2000
    return martingale_clt_check(
        model, r_points=[2.5 + dt / 2, 7.5 + dt / 2],
        h_points=[-1.0, 1.0, 2.0], n=100, replicates=1200, seed=64,
        steps_per_period=2000,
    )


class TestMartingaleCLT:
    def test_blocks_match(self, clt_result):
        res = clt_result
        m = 3
        blocks = np.zeros_like(res.target_cov, dtype=bool)
        for j in range(2):
            blocks[j * m:(j + 1) * m, j * m:(j + 1) * m] = True
        z = np.abs(res.empirical_cov - res.target_cov) / res.cov_se
        assert float(np.max(z[blocks])) < 4.0

    def test_cross_blocks_vanish(self, clt_result):
        res = clt_result
        m = 3
        blocks = np.zeros_like(res.target_cov, dtype=bool)
        for j in range(2):
            blocks[j * m:(j + 1) * m, j * m:(j + 1) * m] = True
        z = np.abs(res.empirical_cov - res.target_cov) / res.cov_se
        assert float(np.max(z[~blocks])) < 4.0

    def test_block_target_structure(self, clt_result):
        # sigma == 1: A entries are h /\ h' for same-sign pairs, else 0
        tgt = clt_result.target_cov[:3, :3]
        expect = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 2.0]])
        assert np.allclose(tgt, expect)

    def test_window_overlap_validation(self, model):
        with pytest.raises(ValueError):
            martingale_clt_check(model, [2.0, 2.1], [1.0], n=5, replicates=10,
                                 seed=1, steps_per_period=100)
