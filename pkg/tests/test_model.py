import math

import numpy as np
import pytest

from periphase.model import (
    CoefFn,
    ConfigError,
    DiffusionModel,
    PeriodicFn,
    SignalSpec,
    model_config_items,
    occupation_measure,
    parse_model_config,
    signal_value,
)

T = 10.0


def spec(theta=4.0, a=3.0, lam=1.0, lam_star=2.0):
    return SignalSpec(
        lam=PeriodicFn("constant", (lam,), T),
        lam_star=PeriodicFn("constant", (lam_star,), T),
        T=T, a=a, theta=theta,
    )


class TestSignalValue:
    def test_inside_window(self):
        assert signal_value(spec(), 5.0) == 3.0

    def test_outside_window(self):
        assert signal_value(spec(), 2.0) == 1.0

    def test_periodic_wrap(self):
        assert signal_value(spec(), 14.5) == 3.0

    def test_open_endpoints(self):
        s = spec()
        assert signal_value(s, 4.0) == 1.0
        assert signal_value(s, 7.0) == 1.0
        assert signal_value(s, 4.0 + 1e-12) == 3.0

    def test_theta_override_domain_error(self):
        with pytest.raises(ValueError):
            signal_value(spec(), 1.0, theta_override=7.5)

    def test_exact_periodicity(self):
        s = SignalSpec(
            lam=PeriodicFn("sinusoid", (1.0, 0.5, 0.3), T),
            lam_star=PeriodicFn("constant", (2.0,), T),
            T=T, a=3.0, theta=4.0,
        )
        rng = np.random.default_rng(5)
        for t in rng.uniform(0, T, 50):
            base = signal_value(s, t)
            for k in (1, 3, 17):
                assert signal_value(s, t + k * T) == pytest.approx(base, abs=1e-9)

    def test_integer_period_shift_exact(self):
        # constant lambda kinds evaluate identically, not just approximately
        s = spec()
        for t in (0.1, 3.9, 4.1, 6.9):
            assert signal_value(s, t) == signal_value(s, t + 5 * T)


class TestOccupationMeasure:
    def test_examples(self):
        assert occupation_measure(10, 4, 7, 25) == pytest.approx(7.0)
        assert occupation_measure(10, 4, 7, 0) == 0.0
        assert occupation_measure(10, 4, 7, 30) == pytest.approx(9.0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            occupation_measure(10, 7, 4, 5)

    def test_additive_in_t(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            t1, t2 = np.sort(rng.uniform(0, 50, 2))
            whole = occupation_measure(10, 2.5, 6.0, t2)
            # additivity: measure over [0,t2] = [0,t1] + [t1,t2]
            left = occupation_measure(10, 2.5, 6.0, t1)
            shifted = whole - left
            brute = _brute_occupation(10, 2.5, 6.0, t1, t2)
            # grid oracle resolves boundaries to (t2-t1)/n per crossing
            resolution = 12 * (t2 - t1) / 200_000
            assert shifted == pytest.approx(brute, abs=max(resolution, 1e-9))

    def test_upper_bound(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            r1, r2 = np.sort(rng.uniform(0, 10, 2))
            if r2 - r1 < 1e-6:
                continue
            t = rng.uniform(0, 100)
            occ = occupation_measure(10, r1, r2, t)
            assert occ <= (r2 - r1) * (math.floor(t / 10) + 1) + 1e-12


def _brute_occupation(T, r1, r2, t1, t2, n=200_001):
    s = np.linspace(t1, t2, n)
    phase = np.mod(s, T)
    return float(np.mean((phase > r1) & (phase < r2)) * (t2 - t1))


class TestCoefFn:
    def test_lipschitz_constants_hold(self):
        rng = np.random.default_rng(3)
        fns = [
            CoefFn("affine", (0.5, 2.0)),
            CoefFn("constant", (1.3,)),
            CoefFn("bounded_rational", (1.0, 0.7)),
        ]
        for fn in fns:
            L = fn.lipschitz_constant
            x = rng.uniform(-20, 20, 500)
            y = rng.uniform(-20, 20, 500)
            fx = np.array([fn(v) for v in x])
            fy = np.array([fn(v) for v in y])
            assert np.all(np.abs(fx - fy) <= L * np.abs(x - y) + 1e-12)

    def test_sigma_bounds(self):
        lo, hi = CoefFn("bounded_rational", (1.0, 0.5)).validate_as_sigma()
        assert (lo, hi) == (1.0, 1.5)
        assert CoefFn("constant", (0.7,)).validate_as_sigma() == (0.7, 0.7)

    def test_sigma_rejections(self):
        with pytest.raises(ValueError):
            CoefFn("constant", (0.0,)).validate_as_sigma()
        with pytest.raises(ValueError):
            CoefFn("bounded_rational", (-1.0, 0.5)).validate_as_sigma()
        with pytest.raises(ValueError):
            CoefFn("affine", (0.0, 1.0)).validate_as_sigma()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CoefFn("cubic", (1.0,))


class TestSignalSpec:
    def test_domain_invariants(self):
        with pytest.raises(ValueError):
            spec(theta=7.5)  # outside (0, T-a)
        with pytest.raises(ValueError):
            SignalSpec(
                lam=PeriodicFn("constant", (1.0,), T),
                lam_star=PeriodicFn("constant", (2.0,), T),
                T=T, a=12.0, theta=4.0,
            )

    def test_lambda_star_positivity(self):
        with pytest.raises(ValueError):
            SignalSpec(
                lam=PeriodicFn("constant", (1.0,), T),
                lam_star=PeriodicFn("sinusoid", (1.0, 2.0, 0.0), T),
                T=T, a=3.0, theta=4.0,
            )

    def test_harris_flag(self):
        m = DiffusionModel(signal=spec(), b=CoefFn("affine", (0.0, 1.0)),
                           sigma=CoefFn("constant", (1.0,)))
        assert m.harris_guaranteed
        m2 = DiffusionModel(signal=spec(), b=CoefFn("constant", (0.0,)),
                            sigma=CoefFn("constant", (1.0,)))
        assert not m2.harris_guaranteed


CONFIG = """
# canonical model
model.T = 10.0
model.a = 3.0
model.theta = 4.0
model.lambda = constant(1.0)
model.lambda_star = sinusoid(2.0, 0.5, 0.0)
model.b = affine(0.0, 1.0)
model.sigma = bounded_rational(1.0, 0.5)
"""


class TestConfig:
    def test_parse_and_roundtrip(self):
        m = parse_model_config(CONFIG)
        assert m.signal.T == 10.0
        assert m.sigma.kind == "bounded_rational"
        text = "\n".join(f"{k} = {v}" for k, v in model_config_items(m))
        m2 = parse_model_config(text)
        assert m2 == m

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="model.sigma"):
            parse_model_config(CONFIG.replace("model.sigma = bounded_rational(1.0, 0.5)", ""))

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match="line"):
            parse_model_config(CONFIG.replace("affine(0.0, 1.0)", "affine(zero, 1.0)"))

    def test_invalid_domain_names_invariant(self):
        with pytest.raises(ConfigError, match="0 < a < T"):
            parse_model_config(CONFIG.replace("model.a = 3.0", "model.a = 12.0"))

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_model_config(CONFIG + "\nmodel.bogus = 1\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_model_config(CONFIG + "\nmodel.T = 11.0\n")
