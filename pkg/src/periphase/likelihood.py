"""Exact log-likelihood-ratio processes of the periodic-signal diffusion,
with Hellinger, occupation-bracket, and martingale-vector diagnostics.

Discretization convention: every likelihood quantity is an Ito sum with
all integrands (burst indicator included) evaluated at the left endpoint
t_i of each grid step.  Under that convention the discrete likelihood
ratio is the exact density ratio of the Euler transition laws, so
E_ref[L] = 1 holds at any step size and log-ratios compose exactly when
each factor recovers increments under its own reference.  Phase windows
shrink like 1/n in the local model; callers must keep them resolved by
several grid cells (the operations warn when they are not).

The deterministic occupation integral of the bracket check uses exact
sub-step interval weights instead, since nothing ties it to a density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import DiffusionModel, signal_value
from .simulate import (
    PathGrid,
    SimulationError,
    _coef_code,
    _chunk_steps,
    _fill_noise,
    _make_generators,
    make_generator,
    phase_lambda_star,
    phase_signal,
)

__all__ = [
    "LikelihoodCurve",
    "PhaseProfiles",
    "recover_increments",
    "log_lr",
    "local_curve",
    "profiles_from_path",
    "simulate_profiles",
    "curve_values",
    "hellinger_mc",
    "HellingerMC",
    "bracket_check",
    "BracketResult",
    "martingale_clt_check",
    "MartingaleVector",
    "CLTCheckResult",
]


def _window_cells(zeta: float, a: float, dt: float, spp: int) -> tuple[int, int]:
    """Smallest and largest cell index j with zeta < j*dt < zeta + a,
    resolving float boundary ties by exact comparison against j*dt."""
    lo = int(math.floor(zeta / dt))
    while lo * dt > zeta:
        lo -= 1
    while (lo + 1) * dt <= zeta:
        lo += 1
    jlo = lo + 1  # first index with j*dt > zeta
    hi = int(math.ceil((zeta + a) / dt))
    while (hi - 1) * dt >= zeta + a:
        hi -= 1
    while hi * dt < zeta + a:
        hi += 1
    jhi = hi - 1  # last index with j*dt < zeta + a
    return jlo, min(jhi, spp - 1)


def _indicator_cells(zeta: float, a: float, dt: float, spp: int) -> np.ndarray:
    d = np.zeros(spp)
    jlo, jhi = _window_cells(zeta, a, dt, spp)
    if jhi >= jlo:
        d[jlo:jhi + 1] = 1.0
    return d


def recover_increments(path: PathGrid, model: DiffusionModel, zeta: float) -> np.ndarray:
    """Brownian increments implied by the path when the signal phase is
    read as zeta:

        dB_i = (xi_{i+1} - xi_i - [S(zeta, t_i) + b(xi_i)] dt) / sigma(xi_i).

    For a path simulated under zeta on the same grid these are the driving
    increments up to rounding."""
    lo, hi = model.signal.theta_domain
    if not lo < zeta < hi:
        raise ValueError(f"zeta={zeta} outside parameter space ({lo}, {hi})")
    x = path.values
    dt = path.dt
    spp = path.steps_per_period
    s_phase = phase_signal(model, spp, theta_override=zeta)
    n_steps = len(x) - 1
    s = np.tile(s_phase, n_steps // spp + 1)[:n_steps]
    drift = s + model.b(x[:-1])
    return (x[1:] - x[:-1] - drift * dt) / model.sigma(x[:-1])


@dataclass(frozen=True)
class PhaseProfiles:
    """Per-phase-cell sufficient statistics of a path for likelihood
    evaluation under any phase parameter:

        G[j] = sum_k (w_j / sigma(xi_{kT+j dt})) dB_{kT+j dt}
        H[j] = sum_k (w_j / sigma(xi_{kT+j dt}))**2

    with dB recovered under `zeta_ref` and w the per-cell weight (the
    burst amplitude lambda_star for likelihoods, 1 for martingale
    vectors)."""

    G: np.ndarray
    H: np.ndarray
    dt: float
    spp: int
    n_periods: int
    zeta_ref: float

    @property
    def cum_g(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.G)])

    @property
    def cum_h(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.H)])


def profiles_from_path(path: PathGrid, model: DiffusionModel, zeta_ref: float,
                       weight: str = "lambda_star") -> PhaseProfiles:
    """Phase aggregation of a stored path."""
    x = path.values
    spp = path.steps_per_period
    n = path.n_periods
    db = recover_increments(path, model, zeta_ref).reshape(n, spp)
    w_cell = phase_lambda_star(model, spp) if weight == "lambda_star" else np.ones(spp)
    ws = w_cell[None, :] / model.sigma(x[:-1]).reshape(n, spp)
    return PhaseProfiles(
        G=np.sum(ws * db, axis=0), H=np.sum(ws * ws, axis=0),
        dt=path.dt, spp=spp, n_periods=n, zeta_ref=zeta_ref,
    )


def _log_lr_from_cells(profiles: PhaseProfiles, zeta_prime: float, zeta: float,
                       a: float) -> float:
    d_prime = _indicator_cells(zeta_prime, a, profiles.dt, profiles.spp)
    d_ref = _indicator_cells(zeta, a, profiles.dt, profiles.spp)
    d = d_prime - d_ref
    stoch = float(np.dot(d, profiles.G))
    quad = float(np.dot(np.abs(d), profiles.H)) * profiles.dt
    return stoch - 0.5 * quad


def log_lr(path: PathGrid, model: DiffusionModel, zeta_prime: float, zeta: float) -> float:
    """log L^{zeta'/zeta} of the observed path: Ito sum of
    delta dB - delta^2 dt / 2 with delta = (S(zeta') - S(zeta))/sigma and
    dB recovered under zeta.  Exactly 0 at zeta' = zeta."""
    lo, hi = model.signal.theta_domain
    for z in (zeta_prime, zeta):
        if not lo < z < hi:
            raise ValueError(f"parameter {z} outside parameter space ({lo}, {hi})")
    profiles = profiles_from_path(path, model, zeta)
    return _log_lr_from_cells(profiles, zeta_prime, zeta, model.signal.a)


@dataclass(frozen=True)
class LikelihoodCurve:
    """log likelihood ratios along a parameter grid; `mode` is
    "global_zeta" (parameters are phases zeta) or "local_u" (parameters
    are local coordinates u with zeta = theta + u/n)."""

    reference: float
    params: np.ndarray
    log_lr: np.ndarray
    mode: str
    n_periods: int
    excluded: np.ndarray

    def argmax_param(self) -> float:
        ok = ~self.excluded
        vals = np.where(ok, self.log_lr, -np.inf)
        return float(self.params[int(np.argmax(vals))])


def curve_values(profiles: PhaseProfiles, a: float, zeta_values: np.ndarray,
                 g_rows: np.ndarray | None = None,
                 h_rows: np.ndarray | None = None) -> np.ndarray:
    """Vectorized log L^{zeta/zeta_ref} along a zeta grid.

    With g_rows/h_rows of shape (B, spp) the evaluation is batched over
    replicates, returning (B, len(zeta_values)); otherwise the stored
    profiles give a single row."""
    dt, spp = profiles.dt, profiles.spp
    zref = profiles.zeta_ref
    if g_rows is None:
        g_rows = profiles.G[None, :]
        h_rows = profiles.H[None, :]
    cg = np.concatenate([np.zeros((len(g_rows), 1)), np.cumsum(g_rows, axis=1)], axis=1)
    ch = np.concatenate([np.zeros((len(h_rows), 1)), np.cumsum(h_rows, axis=1)], axis=1)

    bounds = np.array([_window_cells(z, a, dt, spp) for z in zeta_values], dtype=int)
    jlo, jhi = bounds[:, 0], bounds[:, 1]
    rlo, rhi = _window_cells(zref, a, dt, spp)

    sum_g = cg[:, jhi + 1] - cg[:, jlo]
    sum_g_ref = (cg[:, rhi + 1] - cg[:, rlo])[:, None]

    sum_h = ch[:, jhi + 1] - ch[:, jlo]
    sum_h_ref = (ch[:, rhi + 1] - ch[:, rlo])[:, None]
    ilo = np.maximum(jlo, rlo)
    ihi = np.minimum(jhi, rhi)
    inter = np.where(ihi >= ilo, ch[:, np.maximum(ihi + 1, 0)] - ch[:, np.minimum(ilo, spp)], 0.0)
    sym = sum_h + sum_h_ref - 2.0 * inter

    return (sum_g - sum_g_ref) - 0.5 * dt * sym


def local_curve(path: PathGrid, model: DiffusionModel, theta: float,
                u_grid) -> LikelihoodCurve:
    """log Z_n(u) = log L^{(theta+u/n)/theta} over a local grid; points
    with theta + u/n outside the parameter space are flagged and excluded,
    not evaluated."""
    u_grid = np.asarray(u_grid, dtype=float)
    n = path.n_periods
    lo, hi = model.signal.theta_domain
    zeta = theta + u_grid / n
    excluded = ~((zeta > lo) & (zeta < hi))
    profiles = profiles_from_path(path, model, theta)
    vals = np.full(len(u_grid), np.nan)
    if np.any(~excluded):
        vals[~excluded] = curve_values(profiles, model.signal.a, zeta[~excluded])[0]
    return LikelihoodCurve(
        reference=theta, params=u_grid, log_lr=vals,
        mode="local_u", n_periods=n, excluded=excluded,
    )


# -- streaming batch simulation of phase profiles ------------------------------


def simulate_profiles(model: DiffusionModel, x0: float, n_periods: int,
                      steps_per_period: int, seeds, zeta_ref: float,
                      weight: str = "lambda_star",
                      theta_true: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one path per seed and return its phase profiles (G, H),
    each of shape (len(seeds), spp), without storing the paths.

    Equivalent to simulate_path followed by profiles_from_path, but
    streaming; used by the Monte Carlo drivers where paths are long."""
    spp = int(steps_per_period)
    n_steps = int(n_periods) * spp
    dt = model.signal.T / spp
    sqdt = math.sqrt(dt)
    s_true = phase_signal(model, spp, theta_override=theta_true)
    s_ref = phase_signal(model, spp, theta_override=zeta_ref)
    w_cell = phase_lambda_star(model, spp) if weight == "lambda_star" else np.ones(spp)
    b_kind, b0, b1 = _coef_code(model.b)
    g_kind, g0, g1 = _coef_code(model.sigma)

    B = len(seeds)
    x = np.full(B, float(x0))
    G = np.zeros((spp, B))
    H = np.zeros((spp, B))
    gens = _make_generators(seeds)
    done = 0
    chunk = _chunk_steps(n_steps, B)
    noise = np.empty((chunk, B))
    while done < n_steps:
        m = min(chunk, n_steps - done)
        _fill_noise(gens, noise[:m])
        _kernels.phase_sums_chunk(
            x, done, spp, dt, sqdt, s_true, s_ref, w_cell,
            b_kind, b0, b1, g_kind, g0, g1, noise[:m], G, H,
        )
        done += m
        if not np.all(np.isfinite(x)):
            rep = int(np.flatnonzero(~np.isfinite(x))[0])
            raise SimulationError(done, replicate=rep)
    return np.ascontiguousarray(G.T), np.ascontiguousarray(H.T)


# -- Hellinger Monte Carlo ------------------------------------------------------


@dataclass(frozen=True)
class HellingerMC:
    zeta: float
    zeta_prime: float
    n_periods: int
    replicates: int
    est_sq: float
    est_quart: float
    est_root: float
    se_sq: float
    se_quart: float
    se_root: float
    limit_sq: float
    limit_quart: float
    limit_root: float
    mean_l: float
    se_l: float


def hellinger_mc(model: DiffusionModel, zeta: float, zeta_prime: float,
                 n_periods: int, replicates: int, seed: int,
                 steps_per_period: int = 400, x0: float = 0.0,
                 j_value: float | None = None) -> HellingerMC:
    """Monte Carlo moments of L = L^{zeta'/zeta} under the law at zeta:
    E[(1-sqrt(L))^2], E[(1-L^{1/4})^4], E[sqrt(L)], and E[L] (the
    martingale identity E[L] = 1 is exact in this discretization).

    The limit_* fields are the closed forms of the limiting model at
    v = J * n * |zeta' - zeta|; they are approached as n grows with
    n|zeta'-zeta| fixed."""
    if abs(zeta_prime - zeta) >= model.signal.a:
        raise ValueError("need |zeta' - zeta| < a (overlap regime)")
    sim_model = DiffusionModel(
        signal=type(model.signal)(
            lam=model.signal.lam, lam_star=model.signal.lam_star,
            T=model.signal.T, a=model.signal.a, theta=zeta,
        ),
        b=model.b, sigma=model.sigma,
    )
    spp = int(steps_per_period)
    log_l = np.empty(replicates)
    batch = max(1, min(replicates, (1 << 22) // spp))
    a = model.signal.a
    dt = model.signal.T / spp
    for lo in range(0, replicates, batch):
        hi = min(lo + batch, replicates)
        seeds = [(int(seed) << 64) | i for i in range(lo, hi)]
        G, H = simulate_profiles(sim_model, x0, n_periods, spp, seeds, zeta_ref=zeta)
        prof = PhaseProfiles(G=G[0], H=H[0], dt=dt, spp=spp,
                             n_periods=n_periods, zeta_ref=zeta)
        log_l[lo:hi] = curve_values(prof, a, np.array([zeta_prime]),
                                    g_rows=G, h_rows=H)[:, 0]

    root = np.exp(0.5 * log_l)
    sq = (1.0 - root) ** 2
    quart = (1.0 - np.exp(0.25 * log_l)) ** 4
    lval = np.exp(log_l)

    from .limit_experiment import hellinger_closed_forms

    if j_value is None:
        from .estimators import j_theta

        j_value = j_theta(sim_model, zeta, mode="analytic_ou")
    t_sq, t_quart, t_root = hellinger_closed_forms(j_value, n_periods * abs(zeta_prime - zeta))

    def se(xs):
        return float(np.std(xs, ddof=1) / math.sqrt(replicates))

    return HellingerMC(
        zeta=zeta, zeta_prime=zeta_prime, n_periods=n_periods, replicates=replicates,
        est_sq=float(np.mean(sq)), est_quart=float(np.mean(quart)),
        est_root=float(np.mean(root)),
        se_sq=se(sq), se_quart=se(quart), se_root=se(root),
        limit_sq=t_sq, limit_quart=t_quart, limit_root=t_root,
        mean_l=float(np.mean(lval)), se_l=se(lval),
    )


# -- occupation bracket (shrinking windows) -------------------------------------


@dataclass(frozen=True)
class BracketResult:
    lhs: float
    rhs: float
    limit: float
    r: float
    h: float
    n_periods: int
    cells_per_window: float
    underresolved: bool


def _window_interval(r: float, h: float, n: int) -> tuple[float, float]:
    return (r, r + h / n) if h > 0 else (r - abs(h) / n, r)


def bracket_check(model: DiffusionModel, r: float, h: float, n: int, seed: int,
                  steps_per_period: int = 2000, x0: float = 0.0,
                  limit_periods: int = 2000) -> BracketResult:
    """Occupation-measure bracket for the shrinking window at phase r:

        lhs  = int_0^{nT} sigma^{-2}(xi_s) 1_window(s mod T) ds
               (trapezoid with exact sub-step interval weights),
        rhs  = |h| * (1/n) sum_j sigma^{-2}(xi_{jT + r}),
        limit = |h| * (mu P_{0,r})(sigma^{-2})
               (analytic for constant sigma, long-run empirical average
                otherwise).

    lhs - rhs vanishes in probability as n grows; both tend to the limit.
    """
    T = model.signal.T
    if not 0 < r < T:
        raise ValueError("need 0 < r < T")
    if h == 0 or abs(h) / n >= min(r, T - r):
        raise ValueError("need 0 < |h|/n < min(r, T - r)")
    from .simulate import simulate_path

    spp = int(steps_per_period)
    dt = T / spp
    c, d = _window_interval(r, h, n)
    cells = (d - c) / dt

    path = simulate_path(model, x0, n, spp, seed)
    x = path.values
    inv2 = 1.0 / model.sigma(x) ** 2
    left = inv2[:-1].reshape(n, spp)
    right = inv2[1:].reshape(n, spp)

    j_first = int(math.floor(c / dt))
    j_last = int(math.ceil(d / dt))
    lhs = 0.0
    for j in range(max(j_first, 0), min(j_last, spp)):
        overlap = min(d, (j + 1) * dt) - max(c, j * dt)
        if overlap > 0:
            lhs += overlap * 0.5 * float(np.sum(left[:, j] + right[:, j]))

    jr = round(r / dt)
    rhs = abs(h) * float(np.mean(left[:, jr])) if jr < spp else abs(h) * float(np.mean(right[:, -1]))

    if model.sigma.kind == "constant":
        gamma_r = 1.0 / model.sigma.params[0] ** 2
    else:
        from .simulate import default_burn_in

        burn = default_burn_in(model)
        ref = simulate_path(model, x0, limit_periods + burn, spp, (int(seed) << 64) | 0x11F0)
        vals = ref.values[:-1].reshape(limit_periods + burn, spp)[burn:, jr]
        gamma_r = float(np.mean(1.0 / model.sigma(vals) ** 2))
    limit = abs(h) * gamma_r

    return BracketResult(
        lhs=lhs, rhs=rhs, limit=limit, r=r, h=h, n_periods=n,
        cells_per_window=cells, underresolved=cells < 4.0,
    )


# -- martingale vectors ----------------------------------------------------------


@dataclass(frozen=True)
class MartingaleVector:
    r_points: tuple
    h_points: tuple
    values: np.ndarray  # (replicates, ell*m), ordered r-major
    gamma: np.ndarray   # (ell,)

    @property
    def labels(self) -> list[str]:
        return [f"r={r},h={h}" for r in self.r_points for h in self.h_points]


@dataclass(frozen=True)
class CLTCheckResult:
    vector: MartingaleVector
    empirical_cov: np.ndarray
    target_cov: np.ndarray
    cov_se: np.ndarray
    cells_per_unit_h: float
    underresolved: bool

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.empirical_cov - self.target_cov) / self.cov_se))


def _block_target(h_points, gamma_j: float) -> np.ndarray:
    m = len(h_points)
    A = np.zeros((m, m))
    for i, hi_ in enumerate(h_points):
        for k, hk in enumerate(h_points):
            if hi_ > 0 and hk > 0:
                A[i, k] = min(hi_, hk)
            elif hi_ < 0 and hk < 0:
                A[i, k] = min(abs(hi_), abs(hk))
    return A * gamma_j


def martingale_clt_check(model: DiffusionModel, r_points, h_points, n: int,
                         replicates: int, seed: int,
                         steps_per_period: int = 4000,
                         x0: float = 0.0) -> CLTCheckResult:
    """Simulate the window martingales

        Y^{n,r,h} = int_0^{nT} sigma^{-1}(xi_s) 1_{(r, r+h/n)}(s mod T) dB_s
        (window on the other side of r for h < 0)

    jointly over the (r_j, h_i) family and compare their empirical
    covariance with the block-diagonal target built from
    A_{ii'} = h_i /\\ h_{i'} (same-sign pairs, else 0) and
    Gamma_j = (mu P_{0,r_j})(sigma^{-2})."""
    r_points = tuple(float(r) for r in r_points)
    h_points = tuple(float(h) for h in h_points)
    if any(h == 0 for h in h_points):
        raise ValueError("h points must be nonzero")
    T = model.signal.T
    spp = int(steps_per_period)
    dt = T / spp
    hmax = max(abs(h) for h in h_points)
    spacing = min(
        min(r_points), T - max(r_points),
        *(b - a_ for a_, b in zip(sorted(r_points)[:-1], sorted(r_points)[1:])),
    ) if len(r_points) > 1 else min(min(r_points), T - max(r_points))
    if hmax / n >= spacing:
        raise ValueError("windows overlap: need n*spacing > max |h|")
    cells = hmax / n / dt

    ell, m = len(r_points), len(h_points)
    Y = np.empty((replicates, ell * m))
    gamma = np.zeros(ell)
    batch = max(1, min(replicates, (1 << 22) // spp))
    theta = model.signal.theta
    for lo in range(0, replicates, batch):
        hi = min(lo + batch, replicates)
        seeds = [(int(seed) << 64) | i for i in range(lo, hi)]
        G, H = simulate_profiles(model, x0, n, spp, seeds, zeta_ref=theta, weight="ones")
        cg = np.concatenate([np.zeros((hi - lo, 1)), np.cumsum(G, axis=1)], axis=1)
        for jr, r in enumerate(r_points):
            for ih, h in enumerate(h_points):
                c, d = _window_interval(r, h, n)
                jlo, jhi = _window_cells(c, d - c, dt, spp)
                Y[lo:hi, jr * m + ih] = cg[:, jhi + 1] - cg[:, jlo]
            if lo == 0:
                jr_idx = min(int(round(r / dt)), spp - 1)
                gamma[jr] += float(np.mean(H[:, jr_idx])) / n
    if model.sigma.kind == "constant":
        gamma[:] = 1.0 / model.sigma.params[0] ** 2

    target = np.zeros((ell * m, ell * m))
    for jr in range(ell):
        target[jr * m:(jr + 1) * m, jr * m:(jr + 1) * m] = _block_target(h_points, gamma[jr])

    emp = np.cov(Y, rowvar=False)
    diag = np.diag(emp)
    cov_se = np.sqrt((np.outer(diag, diag) + emp ** 2) / replicates)

    vec = MartingaleVector(r_points=r_points, h_points=h_points, values=Y, gamma=gamma)
    return CLTCheckResult(
        vector=vec, empirical_cov=emp, target_cov=target, cov_se=cov_se,
        cells_per_unit_h=1.0 / (n * dt), underresolved=cells < 4.0,
    )
