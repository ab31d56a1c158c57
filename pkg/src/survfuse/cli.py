"""Command-line front end: estimate, simulate, rates, solve."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import ingest_csv
from .errors import (FitError, NotIdentifiedError, NumericError, PositivityError,
                     SeparationError, SingularSystemError, SolverError,
                     SurvFuseError, ValidationError)
from .estimators import (estimate_covariate_shift, estimate_cs_only,
                         estimate_fusion_dr, estimate_fusion_eff,
                         estimate_rc_only, naive_ivw_combine)
from .fredholm import (FredholmProblem, eta_system_residual, h_system_residual,
                       solve_eta_grid, solve_h_grid, _eta_arrays, _h_arrays)
from .numerics import TimeGrid
from .nuisance import fit_bundle, misspecified_bundle, oracle_bundle
from .simulation import DGP_REGISTRY, SimConfig, rate_study, run_replications

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

_VALIDATION_ERRORS = (ValidationError, NotIdentifiedError, ValueError, OSError)
_NUMERIC_ERRORS = (NumericError, SolverError, FitError, PositivityError,
                   SeparationError, SingularSystemError)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        print(text)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    seed = int.from_bytes(os.urandom(4), "little")
    _log(f"no --seed given; using random seed {seed}")
    return seed


def _bundle_from_flag(flag: str, sample, family: str, with_ratio: bool):
    if flag == "fit":
        return fit_bundle(sample, family=family, with_ratio=with_ratio)
    kind, _, dgp_id = flag.partition(":")
    if dgp_id not in DGP_REGISTRY:
        raise ValidationError(f"unknown dgp id {dgp_id!r} in --nuisance")
    dgp = DGP_REGISTRY[dgp_id]
    if kind == "oracle":
        return oracle_bundle(dgp)
    if kind == "misspec-event":
        return misspecified_bundle(dgp, "event")
    if kind == "misspec-gR":
        return misspecified_bundle(dgp, "inspection+censoring")
    raise ValidationError(f"unknown --nuisance value {flag!r}")


def cmd_estimate(args) -> int:
    seed = _resolve_seed(args)
    sample = ingest_csv(args.input, pi_override=args.pi)
    kinds = (["cs", "rc", "dr", "eff"] if args.estimator == "all"
             else [args.estimator])
    with_ratio = any(k.startswith("shift") for k in kinds)
    bundle = _bundle_from_flag(args.nuisance, sample, args.family, with_ratio)
    report: dict = {"input": os.path.basename(args.input), "seed": seed,
                    "nuisance": args.nuisance, "pi": sample.pi, "n": sample.n,
                    "n1": sample.n1, "n0": sample.n0, "results": {}}
    for t_star in args.t_star:
        block: dict = {}
        results: dict = {}
        for kind in kinds:
            if kind == "cs":
                res = estimate_cs_only(sample, t_star, alpha=args.alpha, seed=seed)
            elif kind == "rc":
                res = estimate_rc_only(sample, bundle, t_star, alpha=args.alpha,
                                       grid_points=args.grid_points)
            elif kind == "dr":
                res = estimate_fusion_dr(sample, bundle, t_star, alpha=args.alpha,
                                         grid_points=args.grid_points, degree=args.degree)
            elif kind == "eff":
                res = estimate_fusion_eff(sample, bundle, t_star, alpha=args.alpha,
                                          grid_points=args.grid_points, degree=args.degree)
            elif kind in ("shift0", "shift1"):
                res = estimate_covariate_shift(sample, bundle, t_star,
                                               target=int(kind[-1]), alpha=args.alpha,
                                               grid_points=args.grid_points,
                                               degree=args.degree)
            else:
                raise ValidationError(f"unknown estimator {kind!r}")
            results[kind] = res
            block[kind] = res.to_dict()
        if args.estimator == "all":
            block["ivw"] = naive_ivw_combine(results["cs"], results["rc"]).to_dict()
        report["results"][format(t_star, ".12g")] = block
    _emit(json.dumps(report, sort_keys=True, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = SimConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = int(args.seed)
    if args.threads is not None:
        config.threads = max(1, int(args.threads))
    report = run_replications(config)
    _emit("\n".join(report.csv_lines()) + "\n", args.output_csv)
    if args.output_json:
        with open(args.output_json, "w") as fh:
            fh.write(report.to_json() + "\n")
    if report.invalid:
        _log("failure cap exceeded; report flagged invalid")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_rates(args) -> int:
    config = SimConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = int(args.seed)
    if args.threads is not None:
        config.threads = max(1, int(args.threads))
    study = rate_study(config)
    _emit("\n".join(study.csv_lines()) + "\n", args.output)
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.dgp not in DGP_REGISTRY:
        raise ValidationError(f"unknown dgp id {args.dgp!r}")
    dgp = DGP_REGISTRY[args.dgp]
    bundle = oracle_bundle(dgp)
    w = np.array([float(v) for v in args.w.split(",")])
    grid = TimeGrid.uniform(args.t_max, args.grid_points)
    problem = FredholmProblem(args.pi, args.t_star, bundle.inspection.window,
                              bundle, w, grid)
    sol_h = solve_h_grid(problem)
    sol_e = solve_eta_grid(problem)
    ah = _h_arrays(problem)
    ae = _eta_arrays(problem)
    res_h = h_system_residual(sol_h.values.values[None, :], ah["dF"][None, :],
                              ah["Q"][None, :], ah["b"][None, :], problem.pi,
                              np.ones(1), np.ones(1))[0]
    res_e = eta_system_residual(sol_e.values.values[None, :], ae["dLam"][None, :],
                                ae["Qs"][None, :], ae["diag"][None, :],
                                ae["b"][None, :], problem.pi)[0]
    lines = ["t,h_star,H_star,eta_star,theta_star,residual_h,residual_eta"]
    pts = problem.grid.points
    for j in range(pts.size):
        lines.append(",".join(format(v, ".12g") for v in (
            pts[j], sol_h.values.values[j], sol_h.derived.values[j],
            sol_e.values.values[j], sol_e.derived.values[j],
            res_h[j], res_e[j])))
    _emit("\n".join(lines) + "\n", args.output)
    _log(f"gamma_w={sol_h.gamma_w:.6g} residual_h_sup={sol_h.residual_sup:.3e} "
         f"residual_eta_sup={sol_e.residual_sup:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survfuse",
        description="Survival probability estimation from fused right-censored "
                    "and current status data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate phi(t*) from a CSV sample")
    p_est.add_argument("--input", required=True)
    p_est.add_argument("--t-star", type=float, action="append", required=True)
    p_est.add_argument("--estimator", default="all",
                       choices=["cs", "rc", "dr", "eff", "shift0", "shift1", "all"])
    p_est.add_argument("--nuisance", default="fit",
                       help="fit | oracle:<dgp-id> | misspec-event:<dgp-id> | "
                            "misspec-gR:<dgp-id>")
    p_est.add_argument("--family", default="linear-rate",
                       choices=["linear-rate", "exponential", "weibull"])
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.add_argument("--seed", type=int, default=None)
    p_est.add_argument("--pi", type=float, default=None,
                       help="pin the design value of P(S=1)")
    p_est.add_argument("--grid-points", type=int, default=2000)
    p_est.add_argument("--degree", type=int, default=10)
    p_est.add_argument("--output", default=None)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="Monte Carlo replication study")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--threads", type=int, default=None,
                       help="replication worker processes (default: config value)")
    p_sim.add_argument("--output-csv", default=None)
    p_sim.add_argument("--output-json", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_rat = sub.add_parser("rates", help="log-MSE vs log-n slope study")
    p_rat.add_argument("--config", required=True)
    p_rat.add_argument("--seed", type=int, default=None)
    p_rat.add_argument("--threads", type=int, default=None)
    p_rat.add_argument("--output", default=None)
    p_rat.set_defaults(func=cmd_rates)

    p_sol = sub.add_parser("solve", help="dump h*/eta* and residuals for one w")
    p_sol.add_argument("--dgp", default="paper")
    p_sol.add_argument("--w", required=True, help="comma-separated covariates")
    p_sol.add_argument("--pi", type=float, default=1.0 / 3.0)
    p_sol.add_argument("--t-star", type=float, default=0.7)
    p_sol.add_argument("--grid-points", type=int, default=2000)
    p_sol.add_argument("--t-max", type=float, default=15.0)
    p_sol.add_argument("--output", default=None)
    p_sol.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        _log(f"validation error: {exc}")
        return EXIT_VALIDATION
    except _NUMERIC_ERRORS as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except SurvFuseError as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
