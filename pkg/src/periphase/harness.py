"""Experiment harness: config parsing, seed management, the check
registry, and deterministic report generation.

Seed splitting rule: every Monte Carlo replicate i of a driver keyed by a
64-bit master seed s uses the Philox stream with 128-bit key
(s << 64) | i, so replicate results never depend on scheduling, chunking
or worker count.  Named checks derive their master as
s XOR crc32(check_name) (masked to 64 bits).

Reports are written atomically and contain no volatile fields: per-check
runtimes are printed to the console summary but kept out of the persisted
report files, which must be byte-identical across reruns and worker
counts.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .model import ConfigError, DiffusionModel, model_from_entries, parse_config_text

__all__ = [
    "ExperimentConfig",
    "ReportEntry",
    "seed_stream",
    "check_seed",
    "run_config",
    "run_checks",
    "CHECKS",
    "write_report",
]

MASK64 = (1 << 64) - 1


def seed_stream(master_seed: int, replicate_index: int) -> int:
    """128-bit Philox key for one replicate: (master << 64) | index.
    Injective in the index over the full 2^64 range."""
    if not 0 <= replicate_index <= MASK64:
        raise ValueError("replicate_index must fit in 64 bits")
    return ((int(master_seed) & MASK64) << 64) | replicate_index


def check_seed(master_seed: int, check_name: str) -> int:
    """Per-check 64-bit master derived from the run seed."""
    return (int(master_seed) ^ zlib.crc32(check_name.encode())) & MASK64


@dataclass(frozen=True)
class ReportEntry:
    """One verified quantity.  pass_ follows |estimate - target| <=
    tolerance unless the check states another rule (recorded in `rule`:
    "abs" is the default band, "less"/"greater" are one-sided)."""

    check_name: str
    estimate: float
    standard_error: float
    target: float
    tolerance: float
    pass_: bool
    runtime_seconds: float
    rule: str = "abs"


def entry(check_name: str, estimate: float, se: float, target: float,
          tolerance: float, runtime: float, rule: str = "abs") -> ReportEntry:
    if rule == "abs":
        ok = abs(estimate - target) <= tolerance
    elif rule == "less":
        ok = estimate <= target
    elif rule == "greater":
        ok = estimate >= target
    else:
        raise ValueError(f"unknown pass rule {rule!r}")
    return ReportEntry(
        check_name=check_name, estimate=float(estimate), standard_error=float(se),
        target=float(target), tolerance=float(tolerance),
        pass_=bool(ok), runtime_seconds=float(runtime), rule=rule,
    )


class ExperimentConfig:
    """Flat dotted-key config: a `model.*` block, `run.*` defaults,
    `study.checks` plus per-check overrides `study.<check>.<param>`, and
    an `output.*` block."""

    def __init__(self, text: str):
        self.entries = parse_config_text(text)
        if "run.seed" not in self.entries:
            raise ConfigError("missing required key 'run.seed' (no wall-clock default)")
        self.seed = int(self._raw("run.seed"))
        checks_raw = self._raw("study.checks", "")
        self.checks = [c.strip() for c in checks_raw.split(",") if c.strip()]
        for name in self.checks:
            if name not in CHECKS:
                raise ConfigError(
                    f"unknown check name {name!r}; known: {', '.join(sorted(CHECKS))}"
                )
        self.output_dir = self._raw("output.directory", "out")
        formats = self._raw("output.formats", "csv, json")
        self.output_formats = [f.strip() for f in formats.split(",") if f.strip()]
        for f in self.output_formats:
            if f not in ("csv", "json"):
                raise ConfigError(f"unknown output format {f!r}")
        self._model: DiffusionModel | None = None

    def _raw(self, key: str, default=None):
        if key in self.entries:
            return self.entries[key][0]
        return default

    @property
    def model(self) -> DiffusionModel:
        if self._model is None:
            try:
                self._model = model_from_entries(self.entries)
            except ConfigError as exc:
                raise ConfigError(f"model block: {exc}") from exc
        return self._model

    def param(self, check: str, name: str, default):
        """study.<check>.<name>, falling back to run.<name>, then the
        built-in default; numbers are coerced to the default's type."""
        raw = self._raw(f"study.{check}.{name}")
        if raw is None:
            raw = self._raw(f"run.{name}")
        if raw is None:
            return default
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(raw))
        if isinstance(default, float):
            return float(raw)
        return raw

    def check_master(self, check: str) -> int:
        override = self._raw(f"study.{check}.seed")
        base = int(override) if override is not None else self.seed
        return check_seed(base, check)


# -- individual checks -----------------------------------------------------------


def _check_limit_variance(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import (
        BAYES_VARIANCE_CONSTANT,
        MLE_VARIANCE_CONSTANT,
        variance_study,
    )

    name = "limit_variance"
    J = cfg.param(name, "j", 1.0)
    K = cfg.param(name, "k", 150.0)
    du = cfg.param(name, "du", 0.02)
    replicates = cfg.param(name, "replicates", 200_000)
    tol_mle = cfg.param(name, "tolerance_mle", 0.8)
    tol_be = cfg.param(name, "tolerance_bayes", 0.6)
    t0 = time.perf_counter()
    vs = variance_study(J=J, K=K, du=du, replicates=replicates, seed=cfg.check_master(name))
    dt_run = time.perf_counter() - t0
    out = [
        entry("limit_variance_mle", vs.var_mle_scaled, vs.se_mle,
              MLE_VARIANCE_CONSTANT, tol_mle, dt_run),
        entry("limit_variance_bayes", vs.var_bayes_scaled, vs.se_bayes,
              BAYES_VARIANCE_CONSTANT, tol_be, 0.0),
        entry("limit_variance_ordering", vs.var_bayes_scaled - vs.var_mle_scaled,
              math.hypot(vs.se_mle, vs.se_bayes), 0.0, 0.0, 0.0, rule="less"),
    ]
    return out


def _check_limit_hellinger(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import hellinger_exact

    name = "limit_hellinger"
    J = cfg.param(name, "j", 1.0)
    replicates = cfg.param(name, "replicates", 10_000)
    deltas_raw = cfg.param(name, "deltas", "0.5, 2, 8")
    deltas = [float(d) for d in str(deltas_raw).split(",")]
    out = []
    for k, d in enumerate(deltas):
        t0 = time.perf_counter()
        h = hellinger_exact(J, d, replicates, cfg.check_master(name) + k)
        dt_run = time.perf_counter() - t0
        out += [
            entry(f"limit_hellinger_sq_d{d:g}", h.est_sq, h.se_sq,
                  h.target_sq, 3 * h.se_sq, dt_run),
            entry(f"limit_hellinger_root_d{d:g}", h.est_root, h.se_root,
                  h.target_root, 3 * h.se_root, 0.0),
            entry(f"limit_hellinger_quart_d{d:g}", h.est_quart, h.se_quart,
                  h.target_quart, 3 * h.se_quart, 0.0),
        ]
    return out


def _check_limit_holder(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import hellinger_exact

    name = "limit_holder"
    J = cfg.param(name, "j", 1.0)
    delta = cfg.param(name, "delta", 0.01)
    replicates = cfg.param(name, "replicates", 2_000_000)
    t0 = time.perf_counter()
    h = hellinger_exact(J, delta, replicates, cfg.check_master(name))
    dt_run = time.perf_counter() - t0
    target = J / 8.0
    # analytic limit of the closed form, then Monte Carlo against the closed form
    return [
        entry("limit_holder_closed_form", h.holder_target, 0.0, target,
              0.01 * target, dt_run),
        entry("limit_holder_mc", h.holder_ratio, 0.5 * h.se_sq / abs(delta),
              h.holder_target, 3 * 0.5 * h.se_sq / abs(delta), 0.0),
    ]


def _check_limit_equivariance(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import equivariance_check

    name = "limit_equivariance"
    J = cfg.param(name, "j", 1.0)
    replicates = cfg.param(name, "replicates", 50_000)
    K = cfg.param(name, "k", 150.0)
    du = cfg.param(name, "du", 0.02)
    u0_raw = cfg.param(name, "u0", "0, 3, -5")
    u0_list = [float(u) for u in str(u0_raw).split(",")]
    level = cfg.param(name, "level", 0.01)
    t0 = time.perf_counter()
    res = equivariance_check(J, u0_list, replicates, cfg.check_master(name), K=K, du=du)
    dt_run = time.perf_counter() - t0
    out = []
    k = len(u0_list)
    for i in range(k):
        for j in range(i + 1, k):
            out.append(entry(
                f"limit_equivariance_ks_u{u0_list[i]:g}_u{u0_list[j]:g}",
                res.ks_pvalue[i, j], 0.0, level, 0.0,
                dt_run if not out else 0.0, rule="greater",
            ))
    return out


def _check_limit_tails(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import tail_decay_check

    name = "limit_tails"
    J = cfg.param(name, "j", 1.0)
    replicates = cfg.param(name, "replicates", 20_000)
    k_raw = cfg.param(name, "k_list", "5, 10, 20")
    K_list = [float(k) for k in str(k_raw).split(",")]
    r2_min = cfg.param(name, "r2_min", 0.9)
    t0 = time.perf_counter()
    res = tail_decay_check(J, replicates, K_list, cfg.check_master(name))
    dt_run = time.perf_counter() - t0
    worst_step = float(np.max(np.diff(res.probabilities)))
    return [
        entry("limit_tails_monotone", worst_step,
              float(np.max(res.standard_errors)), 0.0, 0.0, dt_run, rule="less"),
        entry("limit_tails_r2", res.r_squared, 0.0, r2_min, 0.0, 0.0, rule="greater"),
    ]


def _check_limit_lam(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .limit_experiment import BAYES_VARIANCE_CONSTANT, lam_target

    name = "limit_lam"
    J = cfg.param(name, "j", 1.0)
    replicates = cfg.param(name, "replicates", 200_000)
    tol = cfg.param(name, "tolerance", 0.6 / J ** 2)
    t0 = time.perf_counter()
    est, se = lam_target(J, replicates, cfg.check_master(name))
    dt_run = time.perf_counter() - t0
    return [entry("limit_lam_target", est, se, BAYES_VARIANCE_CONSTANT / J ** 2, tol, dt_run)]


def _check_ou_ergodics(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .ergodic import (
        empirical_invariant,
        ou_analytic_from_model,
        ou_mean_direct,
        ou_moments,
        phase_samples,
    )
    from .simulate import default_burn_in, simulate_path

    name = "ou_ergodics"
    model = cfg.model
    n = cfg.param(name, "n_periods", 5000)
    spp = cfg.param(name, "steps_per_period", 2000)
    ou = ou_analytic_from_model(model)
    burn = default_burn_in(model)
    theta = model.signal.theta
    r_values = (0.0, theta + model.signal.a / 2.0)

    t0 = time.perf_counter()
    path = simulate_path(model, 0.0, n + burn, spp, cfg.check_master(name))
    out = []
    for r in r_values:
        law = empirical_invariant(phase_samples(path, r), burn)
        mean_target, var_target = ou_moments(ou, r)
        var_se = math.sqrt(2.0 / (law.n - 1)) * law.variance
        direct = ou_mean_direct(ou, r)
        out += [
            entry(f"ou_ergodics_mean_r{r:g}", law.mean, law.mean_se,
                  mean_target, 3 * law.mean_se, 0.0),
            entry(f"ou_ergodics_var_r{r:g}", law.variance, var_se,
                  var_target, 3 * var_se, 0.0),
            entry(f"ou_ergodics_dual_route_r{r:g}", abs(mean_target - direct),
                  0.0, 0.0, 1e-10, 0.0),
        ]
    out[0] = ReportEntry(**{**out[0].__dict__, "runtime_seconds": time.perf_counter() - t0})
    return out


def _check_bracket(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .likelihood import bracket_check

    name = "bracket"
    model = cfg.model
    r = cfg.param(name, "r", 2.0)
    h = cfg.param(name, "h", 2.0)
    n = cfg.param(name, "n_periods", 200)
    spp = cfg.param(name, "steps_per_period", 8000)
    rel_tol = cfg.param(name, "relative_tolerance", 0.05)
    limit_tol = cfg.param(name, "limit_tolerance", 0.10)
    t0 = time.perf_counter()
    res = bracket_check(model, r, h, n, cfg.check_master(name), steps_per_period=spp)
    dt_run = time.perf_counter() - t0
    return [
        entry("bracket_lhs_vs_rhs", abs(res.lhs - res.rhs), 0.0, 0.0,
              rel_tol * abs(res.rhs), dt_run),
        entry("bracket_lhs_vs_limit", res.lhs, 0.0, res.limit,
              limit_tol * abs(res.limit), 0.0),
        entry("bracket_rhs_vs_limit", res.rhs, 0.0, res.limit,
              limit_tol * abs(res.limit), 0.0),
    ]


def _check_clt(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .likelihood import martingale_clt_check

    name = "clt"
    model = cfg.model
    n = cfg.param(name, "n_periods", 200)
    spp = cfg.param(name, "steps_per_period", 4000)
    replicates = cfg.param(name, "replicates", 2000)
    z_max = cfg.param(name, "z_max", 4.0)
    dt = model.signal.T / spp
    r_raw = cfg.param(name, "r_points", "")
    if r_raw:
        r_points = [float(x) for x in str(r_raw).split(",")]
    else:
        r_points = [2.5 + dt / 2, 7.5 + dt / 2]
    h_raw = cfg.param(name, "h_points", "-2, 2, 4")
    h_points = [float(x) for x in str(h_raw).split(",")]
    t0 = time.perf_counter()
    res = martingale_clt_check(model, r_points, h_points, n, replicates,
                               cfg.check_master(name), steps_per_period=spp)
    dt_run = time.perf_counter() - t0
    m = len(h_points)
    blocks = np.zeros_like(res.target_cov, dtype=bool)
    for j in range(len(r_points)):
        blocks[j * m:(j + 1) * m, j * m:(j + 1) * m] = True
    z = np.abs(res.empirical_cov - res.target_cov) / res.cov_se
    return [
        entry("clt_block_max_z", float(np.max(z[blocks])), 1.0, z_max, 0.0,
              dt_run, rule="less"),
        entry("clt_cross_block_max_z", float(np.max(z[~blocks])) if np.any(~blocks) else 0.0,
              1.0, z_max, 0.0, 0.0, rule="less"),
    ]


def _check_estimator_moments(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .estimators import mc_study

    name = "estimator_moments"
    model = cfg.model
    n = cfg.param(name, "n_periods", 150)
    replicates = cfg.param(name, "replicates", 2000)
    spp = cfg.param(name, "steps_per_period", 16000)
    rel_tol = cfg.param(name, "relative_tolerance", 0.15)
    t0 = time.perf_counter()
    res = mc_study(model, model.signal.theta, n, replicates,
                   cfg.check_master(name), steps_per_period=spp)
    dt_run = time.perf_counter() - t0
    return [
        entry("estimator_var_mle", res.var_mle, res.variance_se("mle"),
              res.target_var_mle, rel_tol * res.target_var_mle, dt_run),
        entry("estimator_var_bayes", res.var_be, res.variance_se("be"),
              res.target_var_be, rel_tol * res.target_var_be, 0.0),
    ]


def _check_contiguous_equivariance(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .estimators import mc_study

    name = "contiguous_equivariance"
    model = cfg.model
    n = cfg.param(name, "n_periods", 150)
    replicates = cfg.param(name, "replicates", 2000)
    spp = cfg.param(name, "steps_per_period", 16000)
    u_raw = cfg.param(name, "u_values", "0, 3")
    u_values = [float(x) for x in str(u_raw).split(",")]
    t0 = time.perf_counter()
    risks = []
    ses = []
    for k, u in enumerate(u_values):
        res = mc_study(model, model.signal.theta, n, replicates,
                       cfg.check_master(name) + k, contiguous_u=u,
                       steps_per_period=spp)
        risks.append(res.risk_be)
        ses.append(res.risk_be_se)
    dt_run = time.perf_counter() - t0
    combined = math.hypot(*ses)
    return [entry("contiguous_equivariance_risk_gap", abs(risks[0] - risks[1]),
                  combined, 0.0, 2.0 * combined, dt_run)]


def _check_lam_ordering(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .estimators import j_theta, mc_study
    from .limit_experiment import lam_target

    name = "lam_ordering"
    model = cfg.model
    n = cfg.param(name, "n_periods", 150)
    replicates = cfg.param(name, "replicates", 2000)
    spp = cfg.param(name, "steps_per_period", 16000)
    slack = cfg.param(name, "slack", 0.20)
    lam_replicates = cfg.param(name, "lam_replicates", 200_000)
    u_raw = cfg.param(name, "u_values", "-5, 0, 5")
    u_values = [float(x) for x in str(u_raw).split(",")]
    t0 = time.perf_counter()
    max_risk = -math.inf
    max_se = 0.0
    for k, u in enumerate(u_values):
        res = mc_study(model, model.signal.theta, n, replicates,
                       cfg.check_master(name) + k, contiguous_u=u,
                       steps_per_period=spp)
        if res.risk_be > max_risk:
            max_risk, max_se = res.risk_be, res.risk_be_se
    J = j_theta(model, model.signal.theta, mode="analytic_ou")
    bound, _ = lam_target(1.0, lam_replicates, cfg.check_master(name) + 101)
    dt_run = time.perf_counter() - t0
    return [entry("lam_ordering_max_risk", max_risk, max_se,
                  (1.0 - slack) * bound / J ** 2, 0.0, dt_run, rule="greater")]


def _check_fluctuation(cfg: ExperimentConfig) -> list[ReportEntry]:
    from .simulate import fluctuation_probe

    name = "fluctuation"
    model = cfg.model
    replicates = cfg.param(name, "replicates", 10_000)
    lam_exp = cfg.param(name, "lambda_exp", 0.3)
    eta_exp = cfg.param(name, "eta_exp", 0.6)
    t1 = cfg.param(name, "t1", 1.0)
    d_raw = cfg.param(name, "deltas", "0.5, 0.25, 0.125")
    deltas = [float(x) for x in str(d_raw).split(",")]
    t0 = time.perf_counter()
    ps = []
    ses = []
    for k, d in enumerate(sorted(deltas, reverse=True)):
        res = fluctuation_probe(model, t1, d, lam_exp, eta_exp, replicates,
                                cfg.check_master(name) + k)
        ps.append(res.probability)
        ses.append(res.standard_error)
    dt_run = time.perf_counter() - t0
    worst_step = float(np.max(np.diff(ps)))  # deltas descending: p must decrease
    return [entry("fluctuation_monotone_decay", worst_step,
                  float(np.max(ses)), 0.0, 0.0, dt_run, rule="less")]


CHECKS = {
    "limit_variance": _check_limit_variance,
    "limit_hellinger": _check_limit_hellinger,
    "limit_holder": _check_limit_holder,
    "limit_equivariance": _check_limit_equivariance,
    "limit_tails": _check_limit_tails,
    "limit_lam": _check_limit_lam,
    "ou_ergodics": _check_ou_ergodics,
    "bracket": _check_bracket,
    "clt": _check_clt,
    "estimator_moments": _check_estimator_moments,
    "contiguous_equivariance": _check_contiguous_equivariance,
    "lam_ordering": _check_lam_ordering,
    "fluctuation": _check_fluctuation,
}


# -- report persistence ------------------------------------------------------------


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_csv(entries: list[ReportEntry]) -> str:
    lines = ["check_name,estimate,standard_error,target,tolerance,rule,pass"]
    for e in entries:
        lines.append(
            f"{e.check_name},{e.estimate!r},{e.standard_error!r},"
            f"{e.target!r},{e.tolerance!r},{e.rule},{str(e.pass_).lower()}"
        )
    return "\n".join(lines) + "\n"


def report_json(entries: list[ReportEntry]) -> str:
    payload = [
        {
            "check_name": e.check_name,
            "estimate": e.estimate,
            "standard_error": e.standard_error,
            "target": e.target,
            "tolerance": e.tolerance,
            "rule": e.rule,
            "pass": e.pass_,
        }
        for e in entries
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report(entries: list[ReportEntry], output_dir: str, formats) -> list[str]:
    os.makedirs(output_dir, exist_ok=True)
    written = []
    if "csv" in formats:
        path = os.path.join(output_dir, "report.csv")
        _atomic_write(path, report_csv(entries))
        written.append(path)
    if "json" in formats:
        path = os.path.join(output_dir, "report.json")
        _atomic_write(path, report_json(entries))
        written.append(path)
    return written


def run_checks(cfg: ExperimentConfig, echo=None) -> list[ReportEntry]:
    entries: list[ReportEntry] = []
    for name in cfg.checks:
        found = CHECKS[name](cfg)
        entries.extend(found)
        if echo is not None:
            for e in found:
                status = "PASS" if e.pass_ else "FAIL"
                echo(f"{status}  {e.check_name}: estimate={e.estimate:.6g} "
                     f"target={e.target:.6g} tol={e.tolerance:.3g} "
                     f"[{e.runtime_seconds:.1f}s]")
    return entries


def run_config(path: str, echo=None) -> tuple[list[ReportEntry], list[str]]:
    """Execute every requested check and write the report artifacts.
    Raises ConfigError on malformed input; the caller maps outcomes to
    exit codes (0 all pass, 1 any fail, 2 config error)."""
    with open(path) as fh:
        text = fh.read()
    cfg = ExperimentConfig(text)
    if not cfg.checks:
        raise ConfigError("study.checks is empty: nothing to run")
    entries = run_checks(cfg, echo=echo)
    written = write_report(entries, cfg.output_dir, cfg.output_formats)
    return entries, written
