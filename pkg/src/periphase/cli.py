"""Command-line interface.

Subcommands: simulate, estimate {mle|bayes|curve}, mc-study, limit,
diagnose {lln|bracket|clt|hellinger|fluctuation}, run.  Exit codes:
0 all checks pass, 1 a check failed, 2 usage or config error.
Worker count comes only from the PERIPHASE_WORKERS environment variable
and never changes results.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .model import ConfigError, parse_model_config

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _load_model(path: str):
    with open(path) as fh:
        return parse_model_config(fh.read())


def _write_lines(out: str | None, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _cmd_simulate(args) -> int:
    from .simulate import save_path_csv, simulate_path

    model = _load_model(args.config)
    path = simulate_path(model, args.x0, args.n_periods, args.steps_per_period, args.seed)
    save_path_csv(path, args.out)
    print(f"wrote {len(path.values)} points to {args.out}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    from .estimators import bayes, default_zeta_grid, mle
    from .likelihood import local_curve
    from .simulate import load_path_csv

    model = _load_model(args.config)
    path = load_path_csv(args.path)
    if args.what in ("mle", "bayes"):
        grid = default_zeta_grid(model, path.dt)
        value = mle(path, model, grid) if args.what == "mle" else bayes(path, model, grid)
        print(f"{args.what} estimate: {value!r}")
        return EXIT_OK
    theta = args.theta if args.theta is not None else model.signal.theta
    u_grid = np.arange(args.u_min, args.u_max + 0.5 * args.du, args.du)
    curve = local_curve(path, model, theta, u_grid)
    lines = ["u,log_z"]
    for u, v, ex in zip(curve.params, curve.log_lr, curve.excluded):
        if not ex:
            lines.append(f"{u!r},{v!r}")
    _write_lines(args.out, lines)
    return EXIT_OK


def _cmd_mc_study(args) -> int:
    from .estimators import mc_study

    model = _load_model(args.config)
    res = mc_study(
        model, args.theta if args.theta is not None else model.signal.theta,
        args.n_periods, args.replicates, args.seed,
        contiguous_u=args.contiguous_u, steps_per_period=args.steps_per_period,
    )
    lines = ["replicate,theta_hat,theta_star,err_mle_rescaled,err_be_rescaled"]
    for i, rec in enumerate(res.records):
        lines.append(
            f"{i},{rec.theta_hat!r},{rec.theta_star!r},"
            f"{rec.err_mle_rescaled!r},{rec.err_be_rescaled!r}"
        )
    _write_lines(args.out, lines)
    print(
        f"var_mle={res.var_mle:.6g} (target {res.target_var_mle:.6g}), "
        f"var_be={res.var_be:.6g} (target {res.target_var_be:.6g})",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_limit(args) -> int:
    from . import limit_experiment as le

    summary: dict
    if args.check == "variance":
        vs = le.variance_study(J=args.j, K=args.k, du=args.du,
                               replicates=args.replicates, seed=args.seed)
        checks = [
            ("mle", vs.var_mle_scaled, vs.se_mle, le.MLE_VARIANCE_CONSTANT, 0.8),
            ("bayes", vs.var_bayes_scaled, vs.se_bayes, le.BAYES_VARIANCE_CONSTANT, 0.6),
        ]
        summary = {
            name: {
                "estimate": est, "se": se, "target": tgt,
                "pass": abs(est - tgt) <= tol,
            }
            for name, est, se, tgt, tol in checks
        }
        summary["ordering_holds"] = vs.ordering_holds
    elif args.check == "hellinger":
        h = le.hellinger_exact(args.j, args.delta, args.replicates, args.seed)
        summary = {
            "sq": {"estimate": h.est_sq, "se": h.se_sq, "target": h.target_sq,
                   "pass": abs(h.est_sq - h.target_sq) <= 3 * h.se_sq},
            "root": {"estimate": h.est_root, "se": h.se_root, "target": h.target_root,
                     "pass": abs(h.est_root - h.target_root) <= 3 * h.se_root},
            "quart": {"estimate": h.est_quart, "se": h.se_quart, "target": h.target_quart,
                      "pass": abs(h.est_quart - h.target_quart) <= 3 * h.se_quart},
        }
    elif args.check == "equivariance":
        res = le.equivariance_check(args.j, [0.0, 3.0, -5.0], args.replicates,
                                    args.seed, K=args.k, du=args.du)
        summary = {
            "min_ks_pvalue": float(np.min(res.ks_pvalue + np.eye(len(res.u0_values)))),
            "pass": res.all_pairs_pass(),
        }
    elif args.check == "tails":
        res = le.tail_decay_check(args.j, args.replicates, [5.0, 10.0, 20.0], args.seed)
        summary = {
            "probabilities": res.probabilities.tolist(),
            "r_squared": res.r_squared,
            "pass": res.strictly_decreasing and res.r_squared > 0.9,
        }
    else:  # lam
        est, se = le.lam_target(args.j, args.replicates, args.seed)
        target = le.BAYES_VARIANCE_CONSTANT / args.j ** 2
        summary = {"estimate": est, "se": se, "target": target,
                   "pass": abs(est - target) <= max(3 * se, 0.6 / args.j ** 2)}
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    all_pass = all(v.get("pass", True) for v in summary.values() if isinstance(v, dict))
    if "pass" in summary:
        all_pass = all_pass and bool(summary["pass"])
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def _cmd_diagnose(args) -> int:
    model = _load_model(args.config)
    if args.what == "lln":
        from .ergodic import lln_functional, registry_function
        from .simulate import simulate_path

        path = simulate_path(model, 0.0, args.n_periods, args.steps_per_period, args.seed)
        f = registry_function(args.f)
        res = lln_functional(path, ("point_sample", args.r), f)
        lines = ["t,running_average,theoretical_limit"]
        lim = res.limit if res.limit is not None else float("nan")
        for t, v in zip(res.times, res.running_average):
            lines.append(f"{t!r},{v!r},{lim!r}")
        _write_lines(args.out, lines)
        return EXIT_OK
    if args.what == "bracket":
        from .likelihood import bracket_check

        res = bracket_check(model, args.r, args.h, args.n_periods, args.seed,
                            steps_per_period=args.steps_per_period)
        lines = ["quantity,value",
                 f"lhs,{res.lhs!r}", f"rhs,{res.rhs!r}", f"limit,{res.limit!r}",
                 f"cells_per_window,{res.cells_per_window!r}",
                 f"underresolved,{str(res.underresolved).lower()}"]
        _write_lines(args.out, lines)
        return EXIT_OK
    if args.what == "clt":
        from .likelihood import martingale_clt_check

        dt = model.signal.T / args.steps_per_period
        r_points = [2.5 + dt / 2, 7.5 + dt / 2]
        res = martingale_clt_check(model, r_points, [-2.0, 2.0, 4.0],
                                   args.n_periods, args.replicates, args.seed,
                                   steps_per_period=args.steps_per_period)
        labels = res.vector.labels
        lines = ["i,j,empirical,target,se"]
        for i in range(len(labels)):
            for j in range(len(labels)):
                lines.append(
                    f"{labels[i]},{labels[j]},{res.empirical_cov[i, j]!r},"
                    f"{res.target_cov[i, j]!r},{res.cov_se[i, j]!r}"
                )
        _write_lines(args.out, lines)
        return EXIT_OK
    if args.what == "hellinger":
        from .likelihood import hellinger_mc

        theta = model.signal.theta
        res = hellinger_mc(model, theta, theta + args.delta_zeta, args.n_periods,
                           args.replicates, args.seed,
                           steps_per_period=args.steps_per_period)
        lines = ["stat,estimate,se,limit",
                 f"sq,{res.est_sq!r},{res.se_sq!r},{res.limit_sq!r}",
                 f"quart,{res.est_quart!r},{res.se_quart!r},{res.limit_quart!r}",
                 f"root,{res.est_root!r},{res.se_root!r},{res.limit_root!r}",
                 f"mean_l,{res.mean_l!r},{res.se_l!r},1.0"]
        _write_lines(args.out, lines)
        return EXIT_OK
    # fluctuation
    from .simulate import fluctuation_probe

    res = fluctuation_probe(model, args.t1, args.delta, args.lambda_exp,
                            args.eta_exp, args.replicates, args.seed)
    lines = ["quantity,value",
             f"probability,{res.probability!r}",
             f"standard_error,{res.standard_error!r}",
             f"threshold,{res.threshold!r}",
             f"anchor_bound,{res.anchor_bound!r}"]
    _write_lines(args.out, lines)
    return EXIT_OK


def _cmd_run(args) -> int:
    from .harness import run_config

    entries, written = run_config(args.config, echo=print)
    for path in written:
        print(f"wrote {path}")
    failed = [e for e in entries if not e.pass_]
    if failed:
        print(f"{len(failed)} of {len(entries)} checks FAILED")
        return EXIT_CHECK_FAILED
    print(f"all {len(entries)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="periphase",
                                description="Periodic-signal diffusion simulation and phase inference")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a path and save it as CSV")
    sim.add_argument("--config", required=True)
    sim.add_argument("--x0", type=float, default=0.0)
    sim.add_argument("--n-periods", type=int, required=True)
    sim.add_argument("--steps-per-period", type=int, default=1000)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate", help="estimate the phase from a saved path")
    est.add_argument("what", choices=["mle", "bayes", "curve"])
    est.add_argument("--config", required=True)
    est.add_argument("--path", required=True)
    est.add_argument("--theta", type=float, default=None)
    est.add_argument("--u-min", type=float, default=-40.0)
    est.add_argument("--u-max", type=float, default=40.0)
    est.add_argument("--du", type=float, default=0.1)
    est.add_argument("--out", default="-")
    est.set_defaults(func=_cmd_estimate)

    mcs = sub.add_parser("mc-study", help="replicated estimator study")
    mcs.add_argument("--config", required=True)
    mcs.add_argument("--theta", type=float, default=None)
    mcs.add_argument("--n-periods", type=int, required=True)
    mcs.add_argument("--replicates", type=int, required=True)
    mcs.add_argument("--contiguous-u", type=float, default=None)
    mcs.add_argument("--seed", type=int, required=True)
    mcs.add_argument("--steps-per-period", type=int, default=16000)
    mcs.add_argument("--out", default="-")
    mcs.set_defaults(func=_cmd_mc_study)

    lim = sub.add_parser("limit", help="limit-model Monte Carlo checks")
    lim.add_argument("--check", choices=["variance", "hellinger", "equivariance", "tails", "lam"],
                     required=True)
    lim.add_argument("--j", type=float, default=1.0)
    lim.add_argument("--k", type=float, default=150.0)
    lim.add_argument("--du", type=float, default=0.02)
    lim.add_argument("--delta", type=float, default=8.0)
    lim.add_argument("--replicates", type=int, default=200_000)
    lim.add_argument("--seed", type=int, required=True)
    lim.add_argument("--out", default="-")
    lim.set_defaults(func=_cmd_limit)

    dia = sub.add_parser("diagnose", help="diagnostic comparison tables")
    dia.add_argument("what", choices=["lln", "bracket", "clt", "hellinger", "fluctuation"])
    dia.add_argument("--config", required=True)
    dia.add_argument("--seed", type=int, required=True)
    dia.add_argument("--n-periods", type=int, default=200)
    dia.add_argument("--steps-per-period", type=int, default=2000)
    dia.add_argument("--replicates", type=int, default=2000)
    dia.add_argument("--r", type=float, default=2.0)
    dia.add_argument("--h", type=float, default=2.0)
    dia.add_argument("--f", default="identity")
    dia.add_argument("--delta-zeta", type=float, default=0.02)
    dia.add_argument("--t1", type=float, default=1.0)
    dia.add_argument("--delta", type=float, default=0.5)
    dia.add_argument("--lambda-exp", type=float, default=0.3)
    dia.add_argument("--eta-exp", type=float, default=0.6)
    dia.add_argument("--out", default="-")
    dia.set_defaults(func=_cmd_diagnose)

    run = sub.add_parser("run", help="run a study config and write reports")
    run.add_argument("config")
    run.set_defaults(func=_cmd_run)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
