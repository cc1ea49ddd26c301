"""Euler scheme for the periodic-signal diffusion, segment extraction,
path persistence, and the short-interval fluctuation probe.

The grid step is always dt = T / steps_per_period, so period boundaries
kT and phase points kT + j*dt are exact grid points, while theta and
theta + a are in general not on the grid.  Noise comes from counter-based
Philox streams so that a path is a pure function of
(model, x0, grid, seed) and replicate streams are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import CoefFn, DiffusionModel, model_config_items, model_from_entries, signal_value

__all__ = [
    "PathGrid",
    "SegmentChain",
    "SimulationError",
    "simulate_path",
    "extract_segments",
    "fluctuation_probe",
    "FluctuationEstimate",
    "save_path_csv",
    "load_path_csv",
    "default_burn_in",
]

_NOISE_CHUNK_ELEMS = 1 << 21  # per-chunk noise buffer budget (floats)


class SimulationError(RuntimeError):
    """A non-finite state appeared during simulation."""

    def __init__(self, step_index: int, replicate: int | None = None):
        self.step_index = step_index
        self.replicate = replicate
        where = f"step {step_index}"
        if replicate is not None:
            where += f", replicate {replicate}"
        super().__init__(f"non-finite value produced at {where}")


@dataclass(frozen=True)
class PathGrid:
    """A simulated trajectory on the uniform grid t0 + i*dt."""

    t0: float
    dt: float
    values: np.ndarray
    model_meta: DiffusionModel
    seed: int
    steps_per_period: int
    n_periods: int
    scheme: str = "euler"

    def __post_init__(self) -> None:
        expected = self.n_periods * self.steps_per_period + 1
        if len(self.values) != expected:
            raise ValueError(
                f"length {len(self.values)} does not match "
                f"{self.n_periods} periods x {self.steps_per_period} steps"
            )

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def duration(self) -> float:
        return self.dt * (len(self.values) - 1)


@dataclass(frozen=True)
class SegmentChain:
    """Views onto the one-period segments of a path; consecutive segments
    share their boundary grid point."""

    segments: list = field(repr=False)
    count: int

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, k: int) -> np.ndarray:
        return self.segments[k]


def _coef_code(fn: CoefFn) -> tuple[int, float, float]:
    if fn.kind == "constant":
        return _kernels.KIND_CONSTANT, fn.params[0], 0.0
    if fn.kind == "affine":
        return _kernels.KIND_AFFINE, fn.params[0], fn.params[1]
    return _kernels.KIND_BOUNDED_RATIONAL, fn.params[0], fn.params[1]


def phase_signal(model: DiffusionModel, steps_per_period: int,
                 theta_override: float | None = None) -> np.ndarray:
    """S(theta, j*dt) for j = 0 .. steps_per_period-1 (one period of the
    signal sampled at cell left endpoints)."""
    dt = model.signal.T / steps_per_period
    return np.array(
        [signal_value(model.signal, j * dt, theta_override) for j in range(steps_per_period)]
    )


def phase_lambda_star(model: DiffusionModel, steps_per_period: int) -> np.ndarray:
    dt = model.signal.T / steps_per_period
    return np.array([model.signal.lam_star(j * dt) for j in range(steps_per_period)])


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based generator for one stream; `seed` may be up to 128 bits
    (a Philox key)."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _make_generators(seeds) -> list[np.random.Generator]:
    return [make_generator(s) for s in seeds]


def _fill_noise(gens, out: np.ndarray) -> None:
    for r, g in enumerate(gens):
        out[:, r] = g.standard_normal(out.shape[0])


def _chunk_steps(n_steps: int, width: int) -> int:
    return max(1, min(n_steps, _NOISE_CHUNK_ELEMS // max(width, 1)))


def simulate_paths_batch(model: DiffusionModel, x0, n_periods: int,
                         steps_per_period: int, seeds) -> np.ndarray:
    """Simulate one path per seed; returns (n_steps+1, len(seeds)).

    Column r is bit-identical to simulate_path(..., seed=seeds[r]).
    """
    B = len(seeds)
    spp = int(steps_per_period)
    n_steps = int(n_periods) * spp
    dt = model.signal.T / spp
    sqdt = math.sqrt(dt)
    s_phase = phase_signal(model, spp)
    b_kind, b0, b1 = _coef_code(model.b)
    g_kind, g0, g1 = _coef_code(model.sigma)

    x = np.full(B, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=float).copy()
    out = np.empty((n_steps + 1, B))
    gens = _make_generators(seeds)
    done = 0
    chunk = _chunk_steps(n_steps, B)
    noise = np.empty((chunk, B))
    while done < n_steps:
        m = min(chunk, n_steps - done)
        _fill_noise(gens, noise[:m])
        bad = _kernels.record_chunk(
            x, done, spp, dt, sqdt, s_phase,
            b_kind, b0, b1, g_kind, g0, g1, noise[:m], out[done:done + m + 1],
        )
        if bad >= 0:
            rep = int(np.flatnonzero(~np.isfinite(x))[0])
            raise SimulationError(done + bad, replicate=rep)
        done += m
    return out


def simulate_path(model: DiffusionModel, x0: float, n_periods: int,
                  steps_per_period: int, seed: int) -> PathGrid:
    """Euler path over whole periods; identical inputs give a bit-identical
    path."""
    if n_periods <= 0 or steps_per_period <= 0:
        raise ValueError("n_periods and steps_per_period must be positive")
    values = simulate_paths_batch(model, x0, n_periods, steps_per_period, [seed])[:, 0]
    return PathGrid(
        t0=0.0,
        dt=model.signal.T / steps_per_period,
        values=values,
        model_meta=model,
        seed=int(seed),
        steps_per_period=int(steps_per_period),
        n_periods=int(n_periods),
    )


def evolve_states(model: DiffusionModel, x: np.ndarray, n_steps: int,
                  steps_per_period: int, gens, start_step: int = 0) -> int:
    """Advance a batch of states in place without recording; returns the
    absolute step index after evolution."""
    spp = int(steps_per_period)
    dt = model.signal.T / spp
    sqdt = math.sqrt(dt)
    s_phase = phase_signal(model, spp)
    b_kind, b0, b1 = _coef_code(model.b)
    g_kind, g0, g1 = _coef_code(model.sigma)
    done = 0
    chunk = _chunk_steps(n_steps, len(x))
    noise = np.empty((chunk, len(x)))
    while done < n_steps:
        m = min(chunk, n_steps - done)
        _fill_noise(gens, noise[:m])
        bad = _kernels.evolve_chunk(
            x, start_step + done, spp, dt, sqdt, s_phase,
            b_kind, b0, b1, g_kind, g0, g1, noise[:m],
        )
        if bad >= 0:
            rep = int(np.flatnonzero(~np.isfinite(x))[0])
            raise SimulationError(start_step + done + bad, replicate=rep)
        done += m
    return start_step + n_steps


def extract_segments(path: PathGrid) -> SegmentChain:
    """Split a whole-period path into one-period views X_k; zero-copy."""
    spp = path.steps_per_period
    n = len(path.values) - 1
    if n % spp != 0:
        raise ValueError(f"path covers {n / spp} periods; need a whole number")
    count = n // spp
    segments = [path.values[k * spp:(k + 1) * spp + 1] for k in range(count)]
    return SegmentChain(segments=segments, count=count)


def default_burn_in(model: DiffusionModel) -> int:
    """Periods to discard before ergodic averaging: max(20, ceil(10/(gamma*T)))
    when the drift is mean-reverting affine, else 20."""
    if model.b.kind == "affine" and model.b.params[1] > 0:
        gamma = model.b.params[1]
        return max(20, math.ceil(10.0 / (gamma * model.signal.T)))
    return 20


def stationary_pool(model: DiffusionModel, seed: int, size: int = 512,
                    steps_per_period: int = 200, x0: float = 0.0) -> np.ndarray:
    """Empirical draws from the period-start invariant law: xi_{kT} samples
    from one long path after burn-in."""
    burn = default_burn_in(model)
    path = simulate_path(model, x0, burn + size, steps_per_period, seed)
    idx = np.arange(burn + 1, burn + size + 1) * steps_per_period
    return path.values[idx].copy()


@dataclass(frozen=True)
class FluctuationEstimate:
    probability: float
    standard_error: float
    replicates: int
    threshold: float
    anchor_bound: float
    delta: float


def fluctuation_probe(model: DiffusionModel, t1: float, delta: float,
                      lambda_exp: float, eta_exp: float, replicates: int,
                      seed: int, steps_per_period: int = 1000) -> FluctuationEstimate:
    """Monte Carlo estimate of

        P( sup_{t1 <= t <= t1+delta} |xi_t - xi_{t1}| > delta**lambda_exp,
           |xi_{t1}| <= delta**(-eta_exp) )

    with paths started from an empirical stationary draw at time 0.  The
    exceedance probability decays like exp{-c (1/delta)^(1-2*lambda)} for
    small delta; only that qualitative shape is testable.
    """
    if not 0 < lambda_exp < 0.5:
        raise ValueError("lambda_exp must be in (0, 1/2)")
    if not 0.5 < eta_exp < 1.0 - lambda_exp:
        raise ValueError("eta_exp must be in (1/2, 1 - lambda_exp)")
    if delta <= 0:
        raise ValueError("delta must be positive")
    threshold = delta ** lambda_exp
    anchor_bound = delta ** (-eta_exp)
    if threshold >= anchor_bound:
        raise ValueError("delta too large: threshold exceeds the anchor bound")

    spp = int(steps_per_period)
    dt = model.signal.T / spp
    n_pre = round(t1 / dt)
    n_win = max(1, math.ceil(delta / dt - 1e-12))

    pool = stationary_pool(model, seed=(int(seed) << 64) | 0xFA11BACC, size=min(512, replicates))
    x0 = pool[np.arange(replicates) % len(pool)].astype(float).copy()

    sqdt = math.sqrt(dt)
    s_phase = phase_signal(model, spp)
    b_kind, b0, b1 = _coef_code(model.b)
    g_kind, g0, g1 = _coef_code(model.sigma)

    hits = 0
    batch = 4096
    for lo in range(0, replicates, batch):
        hi = min(lo + batch, replicates)
        x = x0[lo:hi].copy()
        gens = _make_generators([(int(seed) << 64) | (lo + r) for r in range(hi - lo)])
        if n_pre > 0:
            evolve_states(model, x, n_pre, spp, gens)
        anchor = x.copy()
        run_max = np.zeros_like(x)
        done = 0
        chunk = _chunk_steps(n_win, len(x))
        noise = np.empty((chunk, len(x)))
        while done < n_win:
            m = min(chunk, n_win - done)
            _fill_noise(gens, noise[:m])
            _kernels.running_max_abs_dev_chunk(
                x, anchor, run_max, n_pre + done, spp, dt, sqdt, s_phase,
                b_kind, b0, b1, g_kind, g0, g1, noise[:m],
            )
            done += m
        hits += int(np.count_nonzero((run_max > threshold) & (np.abs(anchor) <= anchor_bound)))

    p = hits / replicates
    se = math.sqrt(max(p * (1.0 - p), 1.0 / replicates) / replicates)
    return FluctuationEstimate(
        probability=p, standard_error=se, replicates=replicates,
        threshold=threshold, anchor_bound=anchor_bound, delta=delta,
    )


# -- persistence --------------------------------------------------------------


def save_path_csv(path: PathGrid, filename) -> None:
    """CSV with `# key=value` metadata lines, then `t,x` rows at 17
    significant digits (round-trips bit-exactly)."""
    lines = [
        f"# scheme={path.scheme}",
        f"# seed={path.seed}",
        f"# t0={format(path.t0, '.17g')}",
        f"# dt={format(path.dt, '.17g')}",
        f"# steps_per_period={path.steps_per_period}",
        f"# n_periods={path.n_periods}",
    ]
    lines += [f"# {k}={v}" for k, v in model_config_items(path.model_meta)]
    lines.append("t,x")
    times = path.times
    lines += [
        f"{format(times[i], '.17g')},{format(path.values[i], '.17g')}"
        for i in range(len(path.values))
    ]
    with open(filename, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_path_csv(filename) -> PathGrid:
    meta: dict[str, str] = {}
    values = []
    with open(filename) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            elif line != "t,x":
                values.append(float(line.split(",")[1]))
    entries = {k: (v, 0) for k, v in meta.items() if k.startswith("model.")}
    model = model_from_entries(entries)
    return PathGrid(
        t0=float(meta["t0"]),
        dt=float(meta["dt"]),
        values=np.array(values),
        model_meta=model,
        seed=int(meta["seed"]),
        steps_per_period=int(meta["steps_per_period"]),
        n_periods=int(meta["n_periods"]),
        scheme=meta.get("scheme", "euler"),
    )
