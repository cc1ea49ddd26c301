"""Ergodic averages of the periodic diffusion and the analytic
Ornstein-Uhlenbeck oscillating regime.

For an OU-type model  d xi = (S(t) - gamma*xi) dt + sigma0 dW  with
T-periodic S, the time-r marginal of the stationary regime is Gaussian
N(M(r), sigma0^2/(2*gamma)) with

    M(r) = int_0^inf exp(-gamma*v) S(r - v) dv
         = (1 - exp(-gamma*T))^(-1) int_0^T exp(-gamma*v) S(r - v) dv.

That closed form is the oracle against which simulated period-sampled
averages and laws of large numbers are checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .model import CoefFn, DiffusionModel, SignalSpec, signal_value
from .simulate import PathGrid, default_burn_in

__all__ = [
    "EmpiricalLaw",
    "OUAnalytic",
    "ou_moments",
    "ou_mean_direct",
    "ou_analytic_from_model",
    "empirical_invariant",
    "phase_samples",
    "lln_functional",
    "LLNResult",
    "registry_function",
    "gaussian_expectation",
]

_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-13, limit=200)


@dataclass(frozen=True)
class EmpiricalLaw:
    """Samples of a scalar law with the usual summaries."""

    samples: np.ndarray

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def variance(self) -> float:
        return float(np.var(self.samples, ddof=1))

    def quantile(self, q) -> np.ndarray:
        return np.quantile(self.samples, q)

    @property
    def mean_se(self) -> float:
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.n))


@dataclass(frozen=True)
class OUAnalytic:
    """Mean-reversion rate, noise level, periodic input, and the constant
    part of the drift folded out of b(x) = drift_offset - gamma*x."""

    gamma: float
    sigma0: float
    signal: SignalSpec
    drift_offset: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0 or self.sigma0 <= 0:
            raise ValueError("gamma and sigma0 must be positive")

    @property
    def stationary_variance(self) -> float:
        return self.sigma0 ** 2 / (2.0 * self.gamma)


def ou_analytic_from_model(model: DiffusionModel) -> OUAnalytic:
    if model.b.kind != "affine" or model.b.params[1] <= 0:
        raise ValueError("analytic OU regime requires affine drift with gamma > 0")
    if model.sigma.kind != "constant":
        raise ValueError("analytic OU regime requires constant sigma")
    beta, gamma = model.b.params
    return OUAnalytic(
        gamma=gamma, sigma0=model.sigma.params[0],
        signal=model.signal, drift_offset=beta,
    )


def _signal_breakpoints(ou: OUAnalytic, r: float, lo: float, hi: float) -> list[float]:
    """Discontinuity points of v -> S(r - v) inside (lo, hi)."""
    sig = ou.signal
    T = sig.T
    breaks = []
    for anchor in (sig.theta, sig.theta + sig.a):
        base = math.fmod(r - anchor, T)
        if base < 0:
            base += T
        k = math.floor((lo - base) / T)
        v = base + k * T
        while v <= hi:
            if lo < v < hi:
                breaks.append(v)
            v += T
    return sorted(breaks)


def _integrate_exp_signal(ou: OUAnalytic, r: float, lo: float, hi: float) -> float:
    """int_lo^hi exp(-gamma*v) S(r - v) dv with quad split at the
    discontinuities of S."""
    sig = ou.signal

    def integrand(v: float) -> float:
        return math.exp(-ou.gamma * v) * signal_value(sig, (r - v) % sig.T)

    points = [lo] + _signal_breakpoints(ou, r, lo, hi) + [hi]
    total = 0.0
    for p, q in zip(points[:-1], points[1:]):
        val, _ = integrate.quad(integrand, p, q, **_QUAD_OPTS)
        total += val
    return total


def ou_moments(ou: OUAnalytic, r: float) -> tuple[float, float]:
    """Stationary-regime mean M(r) (geometric-sum route) and the variance
    sigma0^2/(2*gamma)."""
    T = ou.signal.T
    one_period = _integrate_exp_signal(ou, r, 0.0, T)
    mean = ou.drift_offset / ou.gamma + one_period / (1.0 - math.exp(-ou.gamma * T))
    return mean, ou.stationary_variance


def ou_mean_direct(ou: OUAnalytic, r: float, n_periods: int = 40) -> float:
    """M(r) by direct truncated integration of int_0^{n_periods*T}; the
    independent route for the dual-route agreement check."""
    T = ou.signal.T
    total = 0.0
    for k in range(n_periods):
        total += _integrate_exp_signal(ou, r, k * T, (k + 1) * T)
    return ou.drift_offset / ou.gamma + total


def phase_samples(path: PathGrid, r: float) -> np.ndarray:
    """The values xi_{kT+r}, k = 0 .. n_periods-1, with r snapped to the
    nearest grid phase."""
    spp = path.steps_per_period
    j = round(r / path.dt)
    if not 0 <= j <= spp:
        raise ValueError(f"r={r} outside one period")
    idx = np.arange(path.n_periods) * spp + j
    return path.values[idx]


def empirical_invariant(samples, burn_in: int) -> EmpiricalLaw:
    """Empirical law of a period-sampled marginal after discarding the
    first `burn_in` values."""
    arr = np.asarray(samples, dtype=float)[burn_in:]
    if len(arr) < 100:
        raise ValueError(f"need at least 100 post-burn-in samples, got {len(arr)}")
    return EmpiricalLaw(samples=arr)


# -- f registry ----------------------------------------------------------------


def registry_function(name: str, *params: float):
    """Closed set of test functions usable in laws of large numbers; keeps
    every oracle computable."""
    if name == "identity":
        return ("identity", (), lambda x: np.asarray(x, dtype=float))
    if name == "square":
        return ("square", (), lambda x: np.asarray(x, dtype=float) ** 2)
    if name == "indicator_below":
        (c,) = params
        return ("indicator_below", (c,), lambda x: (np.asarray(x) < c).astype(float))
    coef = CoefFn(name, tuple(params))
    return (name, tuple(params), coef)


def gaussian_expectation(f, mean: float, var: float) -> float:
    """E f(X) for X ~ N(mean, var); closed form where available, else
    quadrature against the normal density."""
    name, params, fn = f
    sd = math.sqrt(var)
    if name == "identity":
        return mean
    if name == "square":
        return mean ** 2 + var
    if name == "constant":
        return params[0]
    if name == "affine":
        beta, gamma = params
        return beta - gamma * mean
    if name == "indicator_below":
        from scipy.stats import norm

        return float(norm.cdf((params[0] - mean) / sd))

    def integrand(z: float) -> float:
        return float(fn(mean + sd * z)) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    val, _ = integrate.quad(integrand, -12.0, 12.0, **_QUAD_OPTS)
    return val


@dataclass(frozen=True)
class LLNResult:
    times: np.ndarray
    running_average: np.ndarray
    terminal: float
    limit: float | None


def _cell_overlaps(spp: int, dt: float, lo: float, hi: float) -> np.ndarray:
    """|cell_j ∩ (lo, hi)| for the phase cells [j*dt, (j+1)*dt)."""
    left = np.arange(spp) * dt
    return np.clip(np.minimum(hi, left + dt) - np.maximum(lo, left), 0.0, dt)


def lln_functional(path: PathGrid, functional, f) -> LLNResult:
    """Running averages A_t/t of a periodic functional of the path and the
    stationary limit (computable in the OU regime).

    `functional` is ("point_sample", r), ("dirac_comb", r), or
    ("interval_integral", r, r_hi); `f` comes from registry_function.
    """
    kind = functional[0]
    spp = path.steps_per_period
    n = path.n_periods
    T = path.model_meta.signal.T
    name, params, fn = f

    if kind in ("point_sample", "dirac_comb"):
        r = functional[1]
        vals = fn(phase_samples(path, r))
        cum = np.cumsum(vals)
        times = T * np.arange(1, n + 1)
        running = cum / times
    elif kind == "interval_integral":
        r, r_hi = functional[1], functional[2]
        if not 0 <= r < r_hi <= T:
            raise ValueError(f"need 0 <= r < r' <= T, got ({r}, {r_hi})")
        weights = _cell_overlaps(spp, path.dt, r, r_hi)
        per_period = fn(path.values[:-1]).reshape(n, spp) @ weights
        cum = np.cumsum(per_period)
        times = T * np.arange(1, n + 1)
        running = cum / times
    else:
        raise ValueError(f"unknown functional kind {kind!r}")

    limit = None
    try:
        ou = ou_analytic_from_model(path.model_meta)
    except ValueError:
        ou = None
    if ou is not None:
        if kind in ("point_sample", "dirac_comb"):
            m, v = ou_moments(ou, functional[1])
            limit = gaussian_expectation(f, m, v) / T
        else:
            r, r_hi = functional[1], functional[2]
            sig = ou.signal

            def point_limit(s: float) -> float:
                m, v = ou_moments(ou, s)
                return gaussian_expectation(f, m, v)

            breaks = sorted(
                {r, r_hi}
                | {p for p in (sig.theta, sig.theta + sig.a) if r < p < r_hi}
            )
            total = 0.0
            for p, q in zip(breaks[:-1], breaks[1:]):
                val, _ = integrate.quad(point_limit, p, q, epsabs=1e-10, epsrel=1e-10, limit=200)
                total += val
            limit = total / T

    return LLNResult(times=times, running_average=running,
                     terminal=float(running[-1]), limit=limit)


def burn_in_for(model: DiffusionModel) -> int:
    return default_burn_in(model)
